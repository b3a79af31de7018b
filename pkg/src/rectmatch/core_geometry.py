"""Affine map decomposition, the space-of-tilts quotient and its semi-metric.

An orientation-preserving affine map decomposes as

    A = lam * R(psi) * diag(t, 1) * R(phi),   t >= 1, phi in [0, pi)

The quotient that forgets ``lam`` and ``psi`` leaves the polar point
(log t, phi), with (t, phi) and (t, phi + pi) identified.  The distance
between two such points is the log of the transition tilt: the tilt of
the relative map between the two views.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Degenerate, NonPositiveDeterminant

_TILT_FREE_TOL = 1e-9  # singular-value ratio within 1 + tol counts as tilt-free


def rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class AffineMap:
    """2x2 linear part plus pixel offset; orientation preserving."""

    linear: np.ndarray
    offset: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float).reshape(2, 2)
        off = np.asarray(self.offset, dtype=float).reshape(2)
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(off))):
            raise NonPositiveDeterminant("affine map entries must be finite")
        if np.linalg.det(lin) <= 0:
            raise NonPositiveDeterminant(
                f"det(linear) = {np.linalg.det(lin):g} must be > 0"
            )
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "offset", off)

    @classmethod
    def identity(cls) -> "AffineMap":
        return cls(np.eye(2), np.zeros(2))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self.linear.T + self.offset

    def to_homography(self) -> np.ndarray:
        H = np.eye(3)
        H[:2, :2] = self.linear
        H[:2, 2] = self.offset
        return H


@dataclass(frozen=True)
class AffineDecomposition:
    scale: float
    post_rotation: float  # psi, in [0, 2*pi)
    tilt: float  # t >= 1
    pre_rotation: float  # phi, in [0, pi)

    def recompose(self) -> np.ndarray:
        return (
            self.scale
            * rot2(self.post_rotation)
            @ np.diag([self.tilt, 1.0])
            @ rot2(self.pre_rotation)
        )


@dataclass(frozen=True)
class TiltPoint:
    log_tilt: float
    phi: float

    def __post_init__(self):
        lt = float(self.log_tilt)
        if lt < 0:
            raise ValueError("log_tilt must be >= 0")
        phi = float(self.phi) % np.pi
        if lt == 0.0:
            phi = 0.0
        object.__setattr__(self, "log_tilt", lt)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def origin(cls) -> "TiltPoint":
        return cls(0.0, 0.0)

    def to_affine(self) -> AffineMap:
        """Pure tilt-rotation map (lam = 1, psi = 0) with these coordinates."""
        return AffineMap(np.diag([np.exp(self.log_tilt), 1.0]) @ rot2(self.phi))

    def to_symmetric_affine(self) -> AffineMap:
        """Symmetric positive-definite representative R(-phi) diag(t,1) R(phi).

        Same point in the quotient, but with zero net rotation, which
        keeps upright descriptors comparable across the warp.
        """
        t = np.exp(self.log_tilt)
        return AffineMap(rot2(-self.phi) @ np.diag([t, 1.0]) @ rot2(self.phi))


@dataclass(frozen=True)
class RBall:
    center: TiltPoint
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be > 0")


def decompose_affine(A: AffineMap) -> AffineDecomposition:
    """SVD-based decomposition A = lam * R(psi) * diag(t,1) * R(phi).

    t is the singular-value ratio, lam the smaller singular value.  Near
    t = 1 the rotation split is unstable, so maps whose singular values
    agree within 1e-9 are treated as tilt-free (phi = 0, psi = the total
    rotation).
    """
    lin = A.linear
    U, s, Vt = np.linalg.svd(lin)
    if s[1] < 1e-12:
        raise Degenerate(f"smallest singular value {s[1]:g} below 1e-12")
    # det(lin) > 0 implies det(U) * det(Vt) > 0; flip both if negative so
    # they are proper rotations (sign change cancels in U @ diag(s) @ Vt).
    if np.linalg.det(U) < 0:
        U = U.copy()
        Vt = Vt.copy()
        U[:, 1] *= -1
        Vt[1, :] *= -1
    psi = float(np.arctan2(U[1, 0], U[0, 0]))
    phi = float(np.arctan2(Vt[1, 0], Vt[0, 0]))
    t = float(s[0] / s[1])
    lam = float(s[1])
    if t <= 1.0 + _TILT_FREE_TOL:
        # tilt-free: assign the whole rotation to psi
        psi = (psi + phi) % (2 * np.pi)
        return AffineDecomposition(float(np.sqrt(s[0] * s[1])), psi, 1.0, 0.0)
    # fold phi into [0, pi): diag(t,1) R(phi + pi) = R(pi) diag(t,1) R(phi)
    if phi < 0:
        phi += np.pi
        psi += np.pi
    psi %= 2 * np.pi
    return AffineDecomposition(lam, psi, t, phi)


def tilt_coords(A: AffineMap) -> TiltPoint:
    """Coordinates of A in the quotient that forgets scale and post-rotation."""
    d = decompose_affine(A)
    return TiltPoint(np.log(d.tilt), d.pre_rotation)


def transition_tilts(
    log_ta: np.ndarray, phi_a: np.ndarray, log_tb: np.ndarray, phi_b: np.ndarray
) -> np.ndarray:
    """Vectorized transition tilt between tilt points a and b.

    tau = singular-value ratio of  M = diag(t_b, 1) R(phi_b - phi_a) diag(1/t_a, 1).
    Broadcasts over any compatible shapes.
    """
    ta = np.exp(np.asarray(log_ta, dtype=float))
    tb = np.exp(np.asarray(log_tb, dtype=float))
    dphi = np.asarray(phi_b, dtype=float) - np.asarray(phi_a, dtype=float)
    c, s = np.cos(dphi), np.sin(dphi)
    # M = [[tb*c/ta, -tb*s], [s/ta, c]]
    m00 = tb * c / ta
    m01 = -tb * s
    m10 = s / ta
    m11 = c
    tr = m00 * m00 + m01 * m01 + m10 * m10 + m11 * m11  # trace(M^T M)
    det = m00 * m11 - m01 * m10
    disc = np.sqrt(np.maximum(tr * tr - 4.0 * det * det, 0.0))
    smax2 = (tr + disc) / 2.0
    smin2 = (tr - disc) / 2.0
    return np.sqrt(smax2 / np.maximum(smin2, 1e-300))


def transition_tilt(a: TiltPoint, b: TiltPoint) -> float:
    """Transition tilt tau >= 1 between two tilt points."""
    return float(transition_tilts(a.log_tilt, a.phi, b.log_tilt, b.phi))


def tilt_distance(a: TiltPoint, b: TiltPoint) -> float:
    """Semi-metric distance: log of the transition tilt."""
    return float(np.log(transition_tilt(a, b)))


def rball_contains(ball: RBall, p: TiltPoint) -> bool:
    """True iff p lies within the ball under the semi-metric."""
    return tilt_distance(ball.center, p) <= ball.radius + 1e-12
