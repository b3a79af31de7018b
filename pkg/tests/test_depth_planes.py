import numpy as np
import pytest
from scipy import ndimage

from rectmatch.depth_planes import (
    CameraIntrinsics,
    NormalMap,
    PlaneCluster,
    bucket_angular_spacing,
    cluster_normals,
    fold_hemisphere,
    fronto_parallel_homography,
    homography_jacobian_det,
    normals_from_depth,
    orthogonalize_clusters,
    rotation_to_axis,
    segment_clusters,
    sphere_buckets,
)
from rectmatch.errors import (
    InvalidParameter,
    NormalFacesAway,
    TooManyClusters,
)

K = CameraIntrinsics(300.0, 300.0, 127.5, 127.5)


def plane_depth_map(n, d, K=K, h=256, w=256):
    """Depth of the plane n.X = d seen by a pinhole camera at the origin."""
    u, v = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    rx = (u - K.cx) / K.fx
    ry = (v - K.cy) / K.fy
    denom = n[0] * rx + n[1] * ry + n[2]
    with np.errstate(divide="ignore"):
        t = d / denom
    depth = np.where(denom > 1e-9, t, 0.0)
    return depth


def angle_deg(a, b):
    return np.degrees(np.arccos(np.clip(np.dot(a, b), -1.0, 1.0)))


class TestNormalsFromDepth:
    def test_fronto_parallel(self):
        nm = normals_from_depth(np.full((64, 64), 5.0), K)
        inner = nm.normals[nm.valid]
        assert np.allclose(inner, [0.0, 0.0, -1.0], atol=1e-9)
        assert not nm.valid[0].any() and not nm.valid[:, 0].any()

    def test_analytic_slanted_plane(self):
        n = np.array([np.sin(np.deg2rad(30)), 0.0, np.cos(np.deg2rad(30))])
        depth = plane_depth_map(n, 5.0)
        nm = normals_from_depth(depth, K)
        got = nm.normals[nm.valid]
        # camera-facing convention flips z negative
        ref = -n
        angs = np.degrees(
            np.arccos(np.clip(got @ ref, -1.0, 1.0))
        )
        assert np.percentile(angs, 99) < 0.5

    def test_hole_invalidates_neighbors(self):
        depth = np.full((32, 32), 3.0)
        depth[10, 10] = 0.0
        nm = normals_from_depth(depth, K)
        for dy, dx in ((0, 0), (0, 1), (0, -1), (1, 0), (-1, 0)):
            assert not nm.valid[10 + dy, 10 + dx]
        assert nm.valid[10, 12]
        assert np.isnan(nm.normals[10, 10]).all()

    def test_nonfinite_depth_invalid(self):
        depth = np.full((32, 32), 3.0)
        depth[5, 5] = np.nan
        nm = normals_from_depth(depth, K)
        assert not nm.valid[5, 5]


class TestSphereBuckets:
    def test_single_point_pole(self):
        b = sphere_buckets(1)
        assert b.shape == (1, 3)
        assert np.allclose(np.linalg.norm(b, axis=1), 1.0)

    def test_two_points_far_apart(self):
        b = sphere_buckets(2)
        assert angle_deg(b[0], b[1]) >= 90.0

    def test_500_min_spacing(self):
        b = sphere_buckets(500)
        assert np.allclose(np.linalg.norm(b, axis=1), 1.0, atol=1e-12)
        dots = b @ b.T
        np.fill_diagonal(dots, -1.0)
        min_angle = np.arccos(np.clip(dots.max(), -1.0, 1.0))
        assert min_angle >= 0.6 * bucket_angular_spacing(500)

    def test_invalid_n(self):
        with pytest.raises(InvalidParameter):
            sphere_buckets(0)


class TestFoldHemisphere:
    def test_folds_positive_z(self):
        n = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
        out = fold_hemisphere(n)
        assert np.all(out[:, 2] <= 0)
        assert np.allclose(out[0], [0, 0, -1])
        assert np.allclose(out[2], [1, 0, 0])


class TestClusterNormals:
    def test_single_plane_one_cluster(self):
        nm = normals_from_depth(np.full((64, 64), 5.0), K)
        clusters = cluster_normals(nm, sphere_buckets(500), min_votes=10)
        assert len(clusters) == 1
        assert angle_deg(clusters[0].mean_normal, np.array([0, 0, -1.0])) < 0.5
        assert clusters[0].vote_count >= 10

    def test_uniform_random_no_clusters(self):
        rng = np.random.default_rng(0)
        n_pix = 4000
        v = rng.standard_normal((n_pix, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        normals = np.full((1, n_pix, 3), np.nan)
        normals[0] = v
        nm = NormalMap(normals, np.ones((1, n_pix), dtype=bool))
        clusters = cluster_normals(
            nm, sphere_buckets(500), min_votes=n_pix // 10 + 1
        )
        assert clusters == []

    def test_vote_count_at_least_min_votes(self):
        nm = normals_from_depth(plane_depth_map(np.array([0.3, 0.1, 0.95]), 5.0), K)
        for refine in ("none", "mean", "mean_shift"):
            clusters = cluster_normals(nm, sphere_buckets(500), 50, refine)
            for c in clusters:
                assert c.vote_count >= 50
                assert 0 < c.member_pixel_fraction <= 1.0

    def test_refine_modes_agree_on_clean_data(self):
        nm = normals_from_depth(np.full((64, 64), 5.0), K)
        outs = {
            r: cluster_normals(nm, sphere_buckets(500), 10, r)[0].mean_normal
            for r in ("none", "mean", "mean_shift")
        }
        assert angle_deg(outs["mean"], outs["mean_shift"]) < 1.0
        assert angle_deg(outs["none"], outs["mean"]) < 5.0

    def test_invalid_refine(self):
        nm = normals_from_depth(np.full((64, 64), 5.0), K)
        with pytest.raises(InvalidParameter):
            cluster_normals(nm, sphere_buckets(10), 1, refine="fancy")


class TestOrthogonalize:
    def test_already_orthogonal_unchanged(self):
        cl = [
            PlaneCluster(np.array(v, dtype=float), 10, 0.1)
            for v in ([1, 0, 0], [0, 1, 0], [0, 0, 1])
        ]
        out = orthogonalize_clusters(cl)
        for a, b in zip(cl, out):
            assert np.allclose(a.mean_normal, b.mean_normal, atol=1e-9)

    def test_near_orthogonal_projected(self):
        def unit(v):
            v = np.asarray(v, dtype=float)
            return v / np.linalg.norm(v)

        # pairwise angles roughly {85, 88, 92} degrees
        a = unit([1, 0, 0])
        b = unit([np.cos(np.deg2rad(85)), np.sin(np.deg2rad(85)), 0])
        c = unit([0.03, -0.02, 1.0])
        cl = [PlaneCluster(v, 10, 0.1) for v in (a, b, c)]
        out = orthogonalize_clusters(cl)
        M = np.stack([o.mean_normal for o in out])
        G = M @ M.T
        assert np.allclose(G, np.eye(3), atol=1e-6)
        for before, after in zip(cl, out):
            assert angle_deg(before.mean_normal, after.mean_normal) < 5.0

    def test_single_cluster_unchanged(self):
        cl = [PlaneCluster(np.array([0.0, 0.0, -1.0]), 5, 1.0)]
        assert orthogonalize_clusters(cl) == cl

    def test_too_many(self):
        cl = [PlaneCluster(np.eye(3)[i % 3].astype(float), 1, 0.1) for i in range(4)]
        with pytest.raises(TooManyClusters):
            orthogonalize_clusters(cl)


class TestSegmentClusters:
    def test_single_plane_whole_image(self):
        nm = normals_from_depth(np.full((64, 64), 5.0), K)
        clusters = cluster_normals(nm, sphere_buckets(500), 10)
        segs = segment_clusters(nm, clusters, min_area=10)
        assert len(segs) == 1
        assert segs[0].cluster_id == 0
        assert segs[0].area == nm.valid.sum()

    def test_small_component_dropped(self):
        # two patches of the same orientation, one tiny
        valid = np.zeros((40, 40), dtype=bool)
        valid[5:25, 5:25] = True  # 400 px
        valid[30:32, 30:32] = True  # 4 px
        normals = np.full((40, 40, 3), np.nan)
        normals[valid] = [0.0, 0.0, -1.0]
        nm = NormalMap(normals, valid)
        cl = [PlaneCluster(np.array([0.0, 0.0, -1.0]), 10, 1.0)]
        segs = segment_clusters(nm, cl, min_area=10)
        with_id = [s for s in segs if s.cluster_id == 0]
        assert len(with_id) == 1
        assert with_id[0].area == 400
        residual = [s for s in segs if s.cluster_id is None]
        assert len(residual) == 1 and residual[0].area == 4

    def test_zero_clusters_residual_only(self):
        nm = normals_from_depth(np.full((64, 64), 5.0), K)
        segs = segment_clusters(nm, [], min_area=10)
        assert len(segs) == 1
        assert segs[0].cluster_id is None
        assert segs[0].area == nm.valid.sum()

    def test_partition_of_valid_pixels(self):
        n = np.array([0.4, 0.2, 0.89])
        nm = normals_from_depth(plane_depth_map(n / np.linalg.norm(n), 5.0), K)
        clusters = cluster_normals(nm, sphere_buckets(500), 50)
        segs = segment_clusters(nm, clusters, min_area=20)
        total = np.zeros_like(nm.valid)
        for s in segs:
            assert not (total & s.mask).any()
            total |= s.mask
        assert np.array_equal(total, nm.valid)


class TestFrontoParallelHomography:
    def test_fronto_normal_identity(self):
        H = fronto_parallel_homography(np.array([0.0, 0.0, -1.0]), K)
        assert np.allclose(H / H[2, 2], np.eye(3), atol=1e-9)

    def test_positive_z_raises(self):
        with pytest.raises(NormalFacesAway):
            fronto_parallel_homography(np.array([0.0, 0.0, 1.0]), K)

    def test_jacobian_det_one_at_centroid(self):
        n = np.array([np.sin(np.deg2rad(40)), 0.1, -np.cos(np.deg2rad(40))])
        n /= np.linalg.norm(n)
        centroid = np.array([100.0, 140.0])
        H = fronto_parallel_homography(n, K, centroid)
        assert homography_jacobian_det(H, centroid) == pytest.approx(1.0, rel=1e-9)

    def test_warp_makes_plane_fronto(self):
        # render a 30-degree plane, warp its depth-projected points by H,
        # then re-estimate the normal of the warped surface
        ang = np.deg2rad(30)
        n_world = np.array([np.sin(ang), 0.0, np.cos(ang)])
        depth = plane_depth_map(n_world, 5.0)
        nm = normals_from_depth(depth, K)
        n_cam = np.array([-np.sin(ang), 0.0, -np.cos(ang)])  # facing camera
        H = fronto_parallel_homography(n_cam, K)
        # For a pure camera rotation the induced homography is K R K^-1
        # for every scene point; our H composes that with an isotropic
        # pixel scale alpha.  So H-mapped projections must equal the
        # rotated-camera projections times one common scalar.
        R = rotation_to_axis(n_cam, np.array([0.0, 0.0, -1.0]))
        Km = K.matrix()
        alphas = []
        for u, v in ((60, 60), (180, 90), (120, 200)):
            d = depth[v, u]
            X = d * np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
            q = H @ np.array([float(u), float(v), 1.0])
            q = q[:2] / q[2]
            r = Km @ (R @ X)
            r = r[:2] / r[2]
            alphas.extend((q / r).tolist())
        assert np.ptp(alphas) < 1e-9
        # the warped plane is fronto: its normal under the rotated
        # camera is exactly the optical axis
        assert angle_deg(R @ n_cam, np.array([0.0, 0.0, -1.0])) < 1e-9


class TestRotationToAxis:
    def test_maps_n_to_target(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = rng.standard_normal(3)
            n /= np.linalg.norm(n)
            t = rng.standard_normal(3)
            t /= np.linalg.norm(t)
            R = rotation_to_axis(n, t)
            assert np.allclose(R @ n, t, atol=1e-9)
            assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(R) == pytest.approx(1.0)

    def test_antipodal(self):
        R = rotation_to_axis(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0]))
        assert np.allclose(R @ [0, 0, 1], [0, 0, -1], atol=1e-9)
