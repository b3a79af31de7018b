import numpy as np
import pytest

from rectmatch.depth_planes import CameraIntrinsics
from rectmatch.errors import (
    EmptyVisibleRegion,
    InsufficientMatches,
    NotARotation,
)
from rectmatch.features import Keypoint, Match
from rectmatch.robust_estimation import (
    RansacConfig,
    estimate_essential,
    estimate_homography,
    mae_reprojection,
    rotation_error,
)

K = CameraIntrinsics(300.0, 300.0, 255.5, 255.5)  # 512 px frame, ~81 deg FOV


def axis_angle(axis, deg):
    axis = np.asarray(axis, dtype=float)
    axis /= np.linalg.norm(axis)
    a = np.deg2rad(deg)
    Kx = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + np.sin(a) * Kx + (1 - np.cos(a)) * (Kx @ Kx)


def synth_scene(R, t, n=100, seed=0, noise=0.0, outlier_frac=0.0):
    """Projected correspondences of random 3-D points under (I|0), (R|t)."""
    rng = np.random.default_rng(seed)
    X = np.stack(
        [rng.uniform(-5, 5, n), rng.uniform(-5, 5, n), rng.uniform(3, 12, n)], axis=1
    )
    Km = K.matrix()
    pa = (X @ Km.T)
    pa = pa[:, :2] / pa[:, 2:]
    Xb = X @ R.T + t
    pb = (Xb @ Km.T)
    pb = pb[:, :2] / pb[:, 2:]
    if noise > 0:
        pa = pa + rng.normal(0, noise, pa.shape)
        pb = pb + rng.normal(0, noise, pb.shape)
    n_out = int(outlier_frac * n)
    inlier_mask = np.ones(n, dtype=bool)
    if n_out:
        idx = rng.choice(n, n_out, replace=False)
        pb[idx] = rng.uniform(0, 511, (n_out, 2))
        inlier_mask[idx] = False
    kps_a = [Keypoint(x, y, 2.0, 1.0) for x, y in pa]
    kps_b = [Keypoint(x, y, 2.0, 1.0) for x, y in pb]
    matches = [Match(i, i, 0.0, 0.0) for i in range(n)]
    return matches, kps_a, kps_b, inlier_mask


class TestRansacConfig:
    def test_paper_defaults(self):
        cfg = RansacConfig()
        assert cfg.threshold_px == 0.5
        assert cfg.confidence == 1.0 - 1e-4
        assert cfg.max_iterations == 100_000

    def test_validation(self):
        with pytest.raises(ValueError):
            RansacConfig(threshold_px=0.0)
        with pytest.raises(ValueError):
            RansacConfig(confidence=1.0)
        with pytest.raises(ValueError):
            RansacConfig(max_iterations=0)


class TestEssential:
    def test_noise_free_recovery(self):
        R = axis_angle([0, 1, 0], 15.0)
        t = np.array([0.5, 0.1, 0.05])
        matches, ka, kb, _ = synth_scene(R, t, seed=1)
        est = estimate_essential(matches, ka, kb, K, K, RansacConfig())
        assert rotation_error(est.rotation, R) < 0.01
        t_dir = t / np.linalg.norm(t)
        assert np.allclose(est.translation_dir, t_dir, atol=1e-3) or np.allclose(
            -est.translation_dir, t_dir, atol=1e-3
        )

    def test_noisy_with_outliers(self):
        R = axis_angle([0.2, 1, 0.1], 20.0)
        t = np.array([0.6, -0.2, 0.1])
        matches, ka, kb, true_in = synth_scene(
            R, t, seed=2, noise=0.5, outlier_frac=0.3
        )
        cfg = RansacConfig(threshold_px=2.0)  # wide band for noisy inliers
        est = estimate_essential(matches, ka, kb, K, K, cfg)
        assert rotation_error(est.rotation, R) < 1.0
        recovered = np.count_nonzero(est.inlier_mask & true_in)
        assert recovered / true_in.sum() >= 0.90
        # few outliers slip in
        assert np.count_nonzero(est.inlier_mask & ~true_in) <= 3

    def test_insufficient_matches(self):
        matches, ka, kb, _ = synth_scene(np.eye(3), np.array([1.0, 0, 0]), n=7)
        with pytest.raises(InsufficientMatches):
            estimate_essential(matches, ka, kb, K, K, RansacConfig())

    def test_deterministic_given_seed(self):
        R = axis_angle([0, 1, 0], 10.0)
        t = np.array([0.4, 0.0, 0.0])
        matches, ka, kb, _ = synth_scene(R, t, seed=3, noise=0.3, outlier_frac=0.2)
        cfg = RansacConfig(threshold_px=1.5, seed=7)
        e1 = estimate_essential(matches, ka, kb, K, K, cfg)
        e2 = estimate_essential(matches, ka, kb, K, K, cfg)
        assert np.array_equal(e1.rotation, e2.rotation)
        assert np.array_equal(e1.inlier_mask, e2.inlier_mask)

    def test_cheirality_picks_forward_motion(self):
        R = axis_angle([1, 0, 0], 8.0)
        t = np.array([0.0, 0.3, 0.2])
        matches, ka, kb, _ = synth_scene(R, t, seed=4)
        est = estimate_essential(matches, ka, kb, K, K, RansacConfig())
        assert rotation_error(est.rotation, R) < 0.05

    def test_essential_manifold_projection(self):
        R = axis_angle([0, 1, 0], 25.0)
        t = np.array([0.7, 0.0, 0.1])
        matches, ka, kb, _ = synth_scene(R, t, seed=5)
        est = estimate_essential(matches, ka, kb, K, K, RansacConfig())
        s = np.linalg.svd(est.essential, compute_uv=False)
        assert s[0] == pytest.approx(s[1], rel=1e-9)
        assert s[2] == pytest.approx(0.0, abs=1e-9 * s[0])

    def test_rotation_suite_95_percent(self):
        # 100 seeded trials with noise and outliers at paper parameters
        ok = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            R = axis_angle(rng.standard_normal(3), rng.uniform(5, 30))
            t = rng.standard_normal(3)
            t = t / np.linalg.norm(t) * 1.5
            matches, ka, kb, _ = synth_scene(
                R, t, seed=seed + 500, noise=0.5, outlier_frac=0.3
            )
            cfg = RansacConfig(threshold_px=1.5, seed=seed)
            try:
                est = estimate_essential(matches, ka, kb, K, K, cfg)
                if rotation_error(est.rotation, R) < 1.0:
                    ok += 1
            except Exception:
                pass
        assert ok >= 95


class TestHomography:
    def make_matches(self, H, n=50, seed=0, noise=0.0):
        rng = np.random.default_rng(seed)
        pa = rng.uniform(10, 240, (n, 2))
        ph = np.c_[pa, np.ones(n)] @ H.T
        pb = ph[:, :2] / ph[:, 2:]
        if noise:
            pb = pb + rng.normal(0, noise, pb.shape)
        ka = [Keypoint(x, y, 2.0, 1.0) for x, y in pa]
        kb = [Keypoint(x, y, 2.0, 1.0) for x, y in pb]
        return [Match(i, i, 0.0, 0.0) for i in range(n)], ka, kb

    def test_exact_recovery(self):
        H = np.array([[1.2, 0.1, 5.0], [-0.05, 0.9, -3.0], [1e-4, 2e-4, 1.0]])
        matches, ka, kb, = self.make_matches(H, seed=1)
        est = estimate_homography(matches, ka, kb, RansacConfig())
        pa = np.array([[k.x, k.y] for k in ka])
        ph_gt = np.c_[pa, np.ones(len(pa))] @ H.T
        ph_est = np.c_[pa, np.ones(len(pa))] @ est.H.T
        err = np.linalg.norm(
            ph_gt[:, :2] / ph_gt[:, 2:] - ph_est[:, :2] / ph_est[:, 2:], axis=1
        )
        assert err.max() < 1e-6

    def test_identity_correspondences(self):
        matches, ka, kb = self.make_matches(np.eye(3), seed=2)
        est = estimate_homography(matches, ka, kb, RansacConfig())
        assert np.allclose(est.H / est.H[2, 2], np.eye(3), atol=1e-9)

    def test_insufficient(self):
        matches, ka, kb = self.make_matches(np.eye(3), n=3)
        with pytest.raises(InsufficientMatches):
            estimate_homography(matches, ka, kb, RansacConfig())

    def test_outlier_rejection(self):
        rng = np.random.default_rng(3)
        H = np.array([[1.05, 0.02, 2.0], [0.01, 0.98, -1.0], [0.0, 0.0, 1.0]])
        matches, ka, kb = self.make_matches(H, n=60, seed=3)
        # corrupt 20 of them
        for i in rng.choice(60, 20, replace=False):
            kb[i] = Keypoint(rng.uniform(0, 255), rng.uniform(0, 255), 2.0, 1.0)
        est = estimate_homography(matches, ka, kb, RansacConfig())
        assert est.inlier_count >= 35
        assert np.allclose(est.H / est.H[2, 2], H / H[2, 2], atol=1e-3)


class TestRotationError:
    def test_zero(self):
        R = axis_angle([0, 0, 1], 33.0)
        assert rotation_error(R, R) == pytest.approx(0.0, abs=1e-6)

    def test_ten_degrees(self):
        R = axis_angle([0.3, -0.5, 1], 20.0)
        assert rotation_error(R @ axis_angle([0, 0, 1], 10.0), R) == pytest.approx(
            10.0, abs=1e-9
        )

    def test_not_a_rotation(self):
        with pytest.raises(NotARotation):
            rotation_error(np.eye(3) * 2.0, np.eye(3))

    def test_quaternion_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            q1 = rng.standard_normal(4)
            q1 /= np.linalg.norm(q1)
            q2 = rng.standard_normal(4)
            q2 /= np.linalg.norm(q2)

            def quat_to_rot(q):
                w, x, y, z = q
                return np.array(
                    [
                        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
                    ]
                )

            R1, R2 = quat_to_rot(q1), quat_to_rot(q2)
            dq = abs(np.dot(q1, q2))
            expected = np.degrees(2 * np.arccos(np.clip(dq, -1.0, 1.0)))
            assert rotation_error(R1, R2) == pytest.approx(expected, abs=1e-9)


class TestMaeReprojection:
    def test_identical(self):
        H = np.array([[1.1, 0.0, 3.0], [0.0, 0.9, -2.0], [0.0, 0.0, 1.0]])
        assert mae_reprojection(H, H, (64, 64), (64, 64)) == pytest.approx(0.0)

    def test_pure_translation_offset(self):
        H = np.eye(3)
        Ht = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        # visible region: identity keeps all pixels inside
        assert mae_reprojection(Ht @ H, H, (64, 64), (64, 64)) == pytest.approx(2.0)

    def test_agrees_with_dense_oracle(self):
        rng = np.random.default_rng(1)
        H_gt = np.array([[1.05, 0.03, 4.0], [0.02, 0.97, -3.0], [1e-4, 0.0, 1.0]])
        H_est = H_gt + rng.normal(0, 1e-3, (3, 3))
        got = mae_reprojection(H_est, H_gt, (48, 40), (48, 40), stride=1)
        # brute force
        errs = []
        for y in range(40):
            for x in range(48):
                g = H_gt @ [x, y, 1.0]
                g = g[:2] / g[2]
                if not (0 <= g[0] <= 47 and 0 <= g[1] <= 39):
                    continue
                e = H_est @ [x, y, 1.0]
                e = e[:2] / e[2]
                errs.append(np.hypot(*(e - g)))
        assert got == pytest.approx(np.mean(errs), abs=1e-9)

    def test_empty_visible_region(self):
        H_far = np.array([[1.0, 0.0, 1e6], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(EmptyVisibleRegion):
            mae_reprojection(np.eye(3), H_far, (32, 32), (32, 32))
