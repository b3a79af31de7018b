"""RANSAC estimation of essential matrices and homographies, pose
decomposition, and the rotation / reprojection error metrics.

The essential solver is the 8-point algorithm with projection onto the
essential manifold; inliers are scored by symmetric epipolar distance
in pixels.  Homographies use the normalized 4-point DLT with symmetric
transfer error.  All estimates are deterministic given the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateConfiguration,
    EmptyVisibleRegion,
    InsufficientMatches,
    NotARotation,
)


@dataclass(frozen=True)
class RansacConfig:
    threshold_px: float = 0.5
    confidence: float = 1.0 - 1e-4
    max_iterations: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not self.threshold_px > 0:
            raise ValueError("threshold_px must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (0 < self.confidence < 1):
            raise ValueError("confidence must be in (0, 1)")


@dataclass(frozen=True)
class PoseEstimate:
    rotation: np.ndarray
    translation_dir: np.ndarray
    inlier_mask: np.ndarray
    inlier_count: int
    essential: np.ndarray


@dataclass(frozen=True)
class HomographyEstimate:
    H: np.ndarray
    inlier_mask: np.ndarray
    inlier_count: int


def _match_points(matches, kps_a, kps_b):
    pa = np.array([[kps_a[m.index_a].x, kps_a[m.index_a].y] for m in matches])
    pb = np.array([[kps_b[m.index_b].x, kps_b[m.index_b].y] for m in matches])
    return pa, pb


def _homogeneous(p):
    return np.concatenate([p, np.ones((len(p), 1))], axis=1)


def _adaptive_iterations(inlier_ratio, sample_size, confidence, max_iterations):
    if inlier_ratio <= 0:
        return max_iterations
    w = inlier_ratio**sample_size
    if w >= 1.0 - 1e-12:
        return 1
    denom = np.log(1.0 - w)
    n = int(np.ceil(np.log(1.0 - confidence) / denom))
    return max(1, min(n, max_iterations))


def _eight_point(pa_n, pb_n):
    """Linear essential matrix from >= 8 normalized correspondences."""
    x1, y1 = pa_n[:, 0], pa_n[:, 1]
    x2, y2 = pb_n[:, 0], pb_n[:, 1]
    A = np.stack(
        [x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, np.ones_like(x1)],
        axis=1,
    )
    _, _, Vt = np.linalg.svd(A)
    return Vt[-1].reshape(3, 3)


def project_to_essential(E):
    U, s, Vt = np.linalg.svd(E)
    sigma = (s[0] + s[1]) / 2.0
    return U @ np.diag([sigma, sigma, 0.0]) @ Vt


def _sym_epipolar_px(E, pa, pb, Ka_inv, Kb_inv):
    """Symmetric epipolar distance in pixels via the fundamental matrix."""
    F = Kb_inv.T @ E @ Ka_inv
    xa = _homogeneous(pa)
    xb = _homogeneous(pb)
    la = xa @ F.T  # epipolar lines in image b
    lb = xb @ F  # epipolar lines in image a
    e = np.abs(np.sum(xb * la, axis=1))
    na = np.hypot(la[:, 0], la[:, 1])
    nb = np.hypot(lb[:, 0], lb[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        d = 0.5 * (e / np.maximum(na, 1e-300) + e / np.maximum(nb, 1e-300))
    return d


def _triangulate(P1, P2, pa_n, pb_n):
    """Linear triangulation in normalized coordinates."""
    n = len(pa_n)
    X = np.zeros((n, 4))
    for i in range(n):
        A = np.stack(
            [
                pa_n[i, 0] * P1[2] - P1[0],
                pa_n[i, 1] * P1[2] - P1[1],
                pb_n[i, 0] * P2[2] - P2[0],
                pb_n[i, 1] * P2[2] - P2[1],
            ]
        )
        _, _, Vt = np.linalg.svd(A)
        X[i] = Vt[-1]
    return X[:, :3] / X[:, 3:4]


def decompose_essential(E, pa_n, pb_n):
    """Four-fold (R, t) disambiguation with cheirality voting."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = U[:, 2]
    best = None
    P1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    for R in (U @ W @ Vt, U @ W.T @ Vt):
        for tc in (t, -t):
            P2 = np.hstack([R, tc[:, None]])
            X = _triangulate(P1, P2, pa_n, pb_n)
            z1 = X[:, 2]
            z2 = (X @ R.T + tc)[:, 2]
            votes = int(np.count_nonzero((z1 > 0) & (z2 > 0)))
            if best is None or votes > best[0]:
                best = (votes, R, tc)
    _, R, tc = best
    # re-orthonormalize
    Ur, _, Vtr = np.linalg.svd(R)
    R = Ur @ Vtr
    if np.linalg.det(R) < 0:
        R = Ur @ np.diag([1.0, 1.0, -1.0]) @ Vtr
    return R, tc / np.linalg.norm(tc)


def _skew(v):
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def _rodrigues(w):
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + _skew(w)
    k = w / theta
    Kx = _skew(k)
    return np.eye(3) + np.sin(theta) * Kx + (1.0 - np.cos(theta)) * (Kx @ Kx)


def _sampson_residuals(E, xa, xb):
    """Sampson distances of homogeneous normalized correspondences."""
    Ex1 = xa @ E.T
    Etx2 = xb @ E
    num = np.sum(xb * Ex1, axis=1)
    denom = np.sqrt(
        Ex1[:, 0] ** 2 + Ex1[:, 1] ** 2 + Etx2[:, 0] ** 2 + Etx2[:, 1] ** 2
    )
    return num / np.maximum(denom, 1e-300)


def _refine_pose(R0, t0, pa_n, pb_n):
    """Polish (R, t) by least-squares on the Sampson error."""
    from scipy.optimize import least_squares

    xa = _homogeneous(pa_n)
    xb = _homogeneous(pb_n)
    # tangent basis of the unit sphere at t0
    ref = np.array([1.0, 0.0, 0.0]) if abs(t0[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    b1 = np.cross(t0, ref)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(t0, b1)

    def residuals(x):
        R = _rodrigues(x[:3]) @ R0
        t = t0 + x[3] * b1 + x[4] * b2
        t = t / np.linalg.norm(t)
        return _sampson_residuals(_skew(t) @ R, xa, xb)

    sol = least_squares(residuals, np.zeros(5), method="lm", max_nfev=200)
    R = _rodrigues(sol.x[:3]) @ R0
    t = t0 + sol.x[3] * b1 + sol.x[4] * b2
    return R, t / np.linalg.norm(t)


def estimate_essential(matches, kps_a, kps_b, K_a, K_b, cfg: RansacConfig) -> PoseEstimate:
    """RANSAC essential-matrix estimation with 8-point minimal samples."""
    if len(matches) < 8:
        raise InsufficientMatches(f"{len(matches)} matches, need >= 8")
    pa, pb = _match_points(matches, kps_a, kps_b)
    Ka = K_a.matrix() if hasattr(K_a, "matrix") else np.asarray(K_a, dtype=float)
    Kb = K_b.matrix() if hasattr(K_b, "matrix") else np.asarray(K_b, dtype=float)
    Ka_inv = np.linalg.inv(Ka)
    Kb_inv = np.linalg.inv(Kb)
    pa_n = (_homogeneous(pa) @ Ka_inv.T)[:, :2]
    pb_n = (_homogeneous(pb) @ Kb_inv.T)[:, :2]

    n = len(matches)
    rng = np.random.default_rng(cfg.seed)
    best_count = 0
    best_score = np.inf
    best_mask = None
    needed = cfg.max_iterations
    done = 0
    chunk = 2048
    xa_h = _homogeneous(pa)
    xb_h = _homogeneous(pb)
    # single-precision copies for the batched hypothesis sweep; the
    # winning model is re-polished in double precision afterwards
    pa_n32 = pa_n.astype(np.float32)
    pb_n32 = pb_n.astype(np.float32)
    xa_h32 = xa_h.astype(np.float32)
    xb_h32 = xb_h.astype(np.float32)
    Ka_inv32 = Ka_inv.astype(np.float32)
    Kb_inv32 = Kb_inv.astype(np.float32)
    while done < needed and done < cfg.max_iterations:
        b = min(chunk, cfg.max_iterations - done)
        # b random 8-subsets, drawn deterministically from the seed
        idx = rng.random((b, n)).argpartition(8, axis=1)[:, :8]
        x1 = pa_n32[idx]  # (b, 8, 2)
        x2 = pb_n32[idx]
        A = np.stack(
            [
                x2[..., 0] * x1[..., 0], x2[..., 0] * x1[..., 1], x2[..., 0],
                x2[..., 1] * x1[..., 0], x2[..., 1] * x1[..., 1], x2[..., 1],
                x1[..., 0], x1[..., 1], np.ones_like(x1[..., 0]),
            ],
            axis=-1,
        )
        # exact null vector of the 8x9 system with the last coefficient
        # pinned to 1; scale of E is irrelevant for the distances
        try:
            x8 = np.linalg.solve(A[:, :, :8], -A[:, :, 8:9])[:, :, 0]
        except np.linalg.LinAlgError:
            _, evecs = np.linalg.eigh(A.transpose(0, 2, 1) @ A)
            E = evecs[:, :, 0].reshape(b, 3, 3)
        else:
            E = np.concatenate([x8, np.ones((b, 1), dtype=x8.dtype)], axis=1)
            E = E.reshape(b, 3, 3)
        U, s, Vt3 = np.linalg.svd(E)
        sigma = (s[:, 0] + s[:, 1]) / 2.0
        diag = np.diag([1.0, 1.0, 0.0]).astype(E.dtype)
        E = U @ (sigma[:, None, None] * diag) @ Vt3
        # symmetric epipolar distances for the whole batch at once
        F = Kb_inv32.transpose() @ E @ Ka_inv32  # (b, 3, 3)
        la = xa_h32 @ F.transpose(0, 2, 1)  # (b, n, 3) lines in image b
        lb = xb_h32 @ F  # lines in image a
        e = np.abs(np.sum(xb_h32 * la, axis=2))
        na = np.hypot(la[..., 0], la[..., 1])
        nb = np.hypot(lb[..., 0], lb[..., 1])
        d = 0.5 * (e / np.maximum(na, 1e-30) + e / np.maximum(nb, 1e-30))
        masks = d < cfg.threshold_px
        scores = np.sum(np.minimum(d, cfg.threshold_px) ** 2, axis=1)
        i = int(np.argmin(scores))
        if scores[i] < best_score and np.count_nonzero(masks[i]) >= 8:
            # locally optimize: refit on the consensus set so the
            # adaptive termination sees the full inlier support
            mask_lo = masks[i]
            for _ in range(10):
                E_lo = project_to_essential(_eight_point(pa_n[mask_lo], pb_n[mask_lo]))
                d_lo = _sym_epipolar_px(E_lo, pa, pb, Ka_inv, Kb_inv)
                new_mask = d_lo < cfg.threshold_px
                if np.count_nonzero(new_mask) < 8 or np.array_equal(new_mask, mask_lo):
                    break
                mask_lo = new_mask
            score_lo = float(np.sum(np.minimum(d_lo, cfg.threshold_px) ** 2))
            if score_lo < best_score:
                best_score = score_lo
                best_mask = mask_lo
                best_count = int(np.count_nonzero(mask_lo))
            elif float(scores[i]) < best_score:
                best_score = float(scores[i])
                best_mask = masks[i]
                best_count = int(np.count_nonzero(masks[i]))
            needed = _adaptive_iterations(
                best_count / n, 8, cfg.confidence, cfg.max_iterations
            )
        done += b
    if best_mask is None or best_count < 8:
        raise DegenerateConfiguration(
            f"no model with >= 8 inliers found ({best_count} best)"
        )
    # refit on the consensus set until the inlier set stabilizes
    mask = best_mask
    E = project_to_essential(_eight_point(pa_n[mask], pb_n[mask]))
    for _ in range(10):
        d = _sym_epipolar_px(E, pa, pb, Ka_inv, Kb_inv)
        new_mask = d < cfg.threshold_px
        if np.count_nonzero(new_mask) < 8 or np.array_equal(new_mask, mask):
            break
        mask = new_mask
        E = project_to_essential(_eight_point(pa_n[mask], pb_n[mask]))
    R, t = decompose_essential(E, pa_n[mask], pb_n[mask])
    R, t = _refine_pose(R, t, pa_n[mask], pb_n[mask])
    E = _skew(t) @ R
    d = _sym_epipolar_px(E, pa, pb, Ka_inv, Kb_inv)
    new_mask = d < cfg.threshold_px
    if np.count_nonzero(new_mask) >= 8:
        mask = new_mask
    return PoseEstimate(R, t, mask, int(np.count_nonzero(mask)), E)


def _hartley_normalize(p):
    mean = p.mean(axis=0)
    centered = p - mean
    scale = np.sqrt(2.0) / max(np.mean(np.linalg.norm(centered, axis=1)), 1e-300)
    T = np.array(
        [[scale, 0.0, -scale * mean[0]], [0.0, scale, -scale * mean[1]], [0.0, 0.0, 1.0]]
    )
    return (_homogeneous(p) @ T.T)[:, :2], T


def _dlt_homography(pa, pb):
    """Normalized DLT from >= 4 correspondences."""
    pan, Ta = _hartley_normalize(pa)
    pbn, Tb = _hartley_normalize(pb)
    n = len(pa)
    A = np.zeros((2 * n, 9))
    for i in range(n):
        x, y = pan[i]
        u, v = pbn[i]
        A[2 * i] = [-x, -y, -1, 0, 0, 0, u * x, u * y, u]
        A[2 * i + 1] = [0, 0, 0, -x, -y, -1, v * x, v * y, v]
    _, s, Vt = np.linalg.svd(A)
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Tb) @ Hn @ Ta
    if abs(H[2, 2]) < 1e-15:
        raise DegenerateConfiguration("H[2,2] vanished")
    return H / H[2, 2]


def _collinear(p):
    for i in range(len(p)):
        for j in range(i + 1, len(p)):
            for k in range(j + 1, len(p)):
                v1 = p[j] - p[i]
                v2 = p[k] - p[i]
                if abs(v1[0] * v2[1] - v1[1] * v2[0]) < 1e-6:
                    return True
    return False


def _sym_transfer_px(H, pa, pb):
    try:
        Hinv = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return np.full(len(pa), np.inf)
    fwd = _homogeneous(pa) @ H.T
    bwd = _homogeneous(pb) @ Hinv.T
    with np.errstate(divide="ignore", invalid="ignore"):
        fwd2 = fwd[:, :2] / fwd[:, 2:3]
        bwd2 = bwd[:, :2] / bwd[:, 2:3]
    d = 0.5 * (
        np.linalg.norm(fwd2 - pb, axis=1) + np.linalg.norm(bwd2 - pa, axis=1)
    )
    return np.where(np.isfinite(d), d, np.inf)


def estimate_homography(matches, kps_a, kps_b, cfg: RansacConfig) -> HomographyEstimate:
    """RANSAC homography estimation with normalized 4-point DLT samples."""
    if len(matches) < 4:
        raise InsufficientMatches(f"{len(matches)} matches, need >= 4")
    pa, pb = _match_points(matches, kps_a, kps_b)
    n = len(matches)
    rng = np.random.default_rng(cfg.seed)
    # one global conditioning transform per image keeps the batched
    # minimal solves well scaled
    pan, Ta = _hartley_normalize(pa)
    pbn, Tb = _hartley_normalize(pb)
    Tb_inv = np.linalg.inv(Tb)
    xa_h = _homogeneous(pa)
    xb_h = _homogeneous(pb)
    best_count = 0
    best_score = np.inf
    best_mask = None
    needed = cfg.max_iterations
    done = 0
    chunk = 1024
    while done < needed and done < cfg.max_iterations:
        b = min(chunk, cfg.max_iterations - done)
        done += b
        idx = rng.random((b, n)).argpartition(4, axis=1)[:, :4]
        x = pan[idx]  # (b, 4, 2)
        u = pbn[idx]
        zeros = np.zeros_like(x[..., 0])
        ones = np.ones_like(zeros)
        r1 = np.stack(
            [-x[..., 0], -x[..., 1], -ones, zeros, zeros, zeros,
             u[..., 0] * x[..., 0], u[..., 0] * x[..., 1], u[..., 0]],
            axis=-1,
        )
        r2 = np.stack(
            [zeros, zeros, zeros, -x[..., 0], -x[..., 1], -ones,
             u[..., 1] * x[..., 0], u[..., 1] * x[..., 1], u[..., 1]],
            axis=-1,
        )
        A = np.concatenate([r1, r2], axis=1)  # (b, 8, 9)
        A8 = A[:, :, :8]
        # degenerate (collinear) samples make A8 singular; regularize so
        # the batched solve survives and their models score themselves out
        dets = np.linalg.det(A8)
        bad = np.abs(dets) < 1e-12
        if bad.any():
            A8 = A8 + bad[:, None, None] * 1e-6 * np.eye(8)
        try:
            h8 = np.linalg.solve(A8, -A[:, :, 8:9])[:, :, 0]
        except np.linalg.LinAlgError:
            continue
        Hn = np.concatenate([h8, np.ones((b, 1))], axis=1).reshape(b, 3, 3)
        Hpx = Tb_inv @ Hn @ Ta
        hdets = np.linalg.det(Hpx)
        ok = np.abs(hdets) > 1e-12
        Hpx[~ok] = np.eye(3)
        Hinv = np.linalg.inv(Hpx)
        fwd = xa_h @ Hpx.transpose(0, 2, 1)  # (b, n, 3)
        bwd = xb_h @ Hinv.transpose(0, 2, 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            fwd2 = fwd[:, :, :2] / fwd[:, :, 2:3]
            bwd2 = bwd[:, :, :2] / bwd[:, :, 2:3]
        d = 0.5 * (
            np.linalg.norm(fwd2 - pb[None], axis=2)
            + np.linalg.norm(bwd2 - pa[None], axis=2)
        )
        d = np.where(np.isfinite(d), d, np.inf)
        d[~ok | bad] = np.inf
        scores = np.sum(np.minimum(d, cfg.threshold_px) ** 2, axis=1)
        i = int(np.argmin(scores))
        if scores[i] < best_score and np.count_nonzero(d[i] < cfg.threshold_px) >= 4:
            mask_lo = d[i] < cfg.threshold_px
            d_lo = d[i]
            for _ in range(10):
                try:
                    H_lo = _dlt_homography(pa[mask_lo], pb[mask_lo])
                except (DegenerateConfiguration, np.linalg.LinAlgError):
                    break
                d_lo = _sym_transfer_px(H_lo, pa, pb)
                new_mask = d_lo < cfg.threshold_px
                if np.count_nonzero(new_mask) < 4 or np.array_equal(new_mask, mask_lo):
                    break
                mask_lo = new_mask
            score_lo = float(np.sum(np.minimum(d_lo, cfg.threshold_px) ** 2))
            if score_lo < best_score:
                best_score = score_lo
                best_mask = mask_lo
            elif float(scores[i]) < best_score:
                best_score = float(scores[i])
                best_mask = d[i] < cfg.threshold_px
            best_count = int(np.count_nonzero(best_mask))
            needed = _adaptive_iterations(
                best_count / n, 4, cfg.confidence, cfg.max_iterations
            )
    if best_mask is None or best_count < 4:
        raise DegenerateConfiguration(
            f"no homography with >= 4 inliers found ({best_count} best)"
        )
    H = _dlt_homography(pa[best_mask], pb[best_mask])
    d = _sym_transfer_px(H, pa, pb)
    mask = d < cfg.threshold_px
    if np.count_nonzero(mask) >= 4:
        H = _dlt_homography(pa[mask], pb[mask])
    else:
        mask = best_mask
    return HomographyEstimate(H, mask, int(np.count_nonzero(mask)))


def rotation_error(R_est: np.ndarray, R_gt: np.ndarray) -> float:
    """Angle of R_est R_gt^T in degrees, clamped to [0, 180]."""
    for R in (R_est, R_gt):
        R = np.asarray(R, dtype=float)
        if np.linalg.norm(R @ R.T - np.eye(3)) > 1e-6 or abs(np.linalg.det(R) - 1) > 1e-6:
            raise NotARotation("matrix is not orthonormal with det 1")
    dR = np.asarray(R_est) @ np.asarray(R_gt).T
    c = (np.trace(dR) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def mae_reprojection(
    H_est: np.ndarray,
    H_gt: np.ndarray,
    image_a_size: tuple,
    image_b_size: tuple,
    stride: int = 1,
) -> float:
    """Mean reprojection displacement over the visible region.

    The visible region is every pixel of image A whose ground-truth
    image lies inside image B; the error is the mean L2 displacement
    between the two mappings over it.
    """
    wa, ha = image_a_size
    wb, hb = image_b_size
    xs, ys = np.meshgrid(
        np.arange(0, wa, stride, dtype=float), np.arange(0, ha, stride, dtype=float)
    )
    p = np.stack([xs.ravel(), ys.ravel()], axis=1)
    gt = _homogeneous(p) @ np.asarray(H_gt, dtype=float).T
    gt2 = gt[:, :2] / gt[:, 2:3]
    visible = (
        (gt2[:, 0] >= 0) & (gt2[:, 0] <= wb - 1) & (gt2[:, 1] >= 0) & (gt2[:, 1] <= hb - 1)
    )
    if not visible.any():
        raise EmptyVisibleRegion("no pixel of image A maps into image B")
    est = _homogeneous(p[visible]) @ np.asarray(H_est, dtype=float).T
    est2 = est[:, :2] / est[:, 2:3]
    return float(np.mean(np.linalg.norm(est2 - gt2[visible], axis=1)))
