"""Two-view image matching with rectification-based view synthesis."""

from .core_geometry import (
    AffineDecomposition,
    AffineMap,
    RBall,
    TiltPoint,
    decompose_affine,
    tilt_coords,
    tilt_distance,
    transition_tilt,
    transition_tilts,
)
from .covering import Covering, ShapeSet, asift_covering, assign_masks, greedy_cover
from .depth_planes import (
    CameraIntrinsics,
    NormalMap,
    PlaneCluster,
    SegmentMask,
    cluster_normals,
    fronto_parallel_homography,
    normals_from_depth,
    orthogonalize_clusters,
    segment_clusters,
    sphere_buckets,
)
from .features import Keypoint, describe, detect, match, merge_features
from .harness import MethodConfig, PairEvaluation, RunStats, evaluate_dataset, run_pair
from .robust_estimation import (
    HomographyEstimate,
    PoseEstimate,
    RansacConfig,
    estimate_essential,
    estimate_homography,
    mae_reprojection,
    rotation_error,
)
from .shape_field import (
    DenseShapeField,
    SparseShapes,
    estimate_shape_field_structure_tensor,
    load_depth_map,
    load_shape_field,
    save_depth_map,
    save_shape_field,
)
from .synthetic import SceneSpec, SyntheticPair, generate_synthetic_pair
from .warping import WarpRecord, backproject_points, warp_masked, warped_valid_mask

__version__ = "0.1.0"
