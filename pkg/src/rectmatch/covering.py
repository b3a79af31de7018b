"""Greedy r-ball coverings of affine-shape sets in the space of tilts.

Includes the ASIFT-style fixed covering of the whole log-tilt disk and
the label assignment used to partition dense shape fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core_geometry import AffineMap, RBall, TiltPoint, transition_tilts
from .errors import EmptyShapeSet, InvalidParameter

UNASSIGNED = -1

DEFAULT_RADIUS = float(np.log(1.7))  # sub-doubling tilt; overridable everywhere
DEFAULT_MIN_RATIO = 0.95


def _points_to_arrays(points) -> tuple[np.ndarray, np.ndarray]:
    lt = np.array([p.log_tilt for p in points], dtype=float)
    ph = np.array([p.phi for p in points], dtype=float)
    return lt, ph


def pairwise_distances(centers, points) -> np.ndarray:
    """(n_centers, n_points) matrix of semi-metric distances."""
    clt, cph = _points_to_arrays(centers)
    plt_, pph = _points_to_arrays(points)
    tau = transition_tilts(clt[:, None], cph[:, None], plt_[None, :], pph[None, :])
    return np.log(tau)


@dataclass(frozen=True)
class ShapeSet:
    points: list
    weights: np.ndarray | None = None

    def resolved_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(len(self.points))
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.points),) or np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise InvalidParameter("weights must be finite, positive, one per point")
        return w


@dataclass(frozen=True)
class Covering:
    balls: list
    covered_ratio: float
    assignment: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def to_json_dict(self) -> dict:
        return {
            "balls": [
                {"center": [b.center.log_tilt, b.center.phi], "radius": b.radius}
                for b in self.balls
            ],
            "covered_ratio": self.covered_ratio,
        }

    def dump_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=2)


def greedy_cover(shapes: ShapeSet, radius: float, min_ratio: float) -> Covering:
    """Greedy set cover of the shape points by r-balls.

    Candidate centers are the points themselves plus the origin (so the
    identity rectification is always available).  Each round picks the
    candidate covering the most uncovered weight; ties go to the earlier
    candidate.  Stops once ``min_ratio`` of the total weight is covered
    or no candidate gains anything.
    """
    if len(shapes.points) == 0:
        raise EmptyShapeSet("cannot cover an empty shape set")
    if not radius > 0:
        raise InvalidParameter("radius must be > 0")
    if not (0 < min_ratio <= 1):
        raise InvalidParameter("min_ratio must be in (0, 1]")
    weights = shapes.resolved_weights()
    total = float(weights.sum())
    candidates = [TiltPoint.origin()] + list(shapes.points)
    # (n_cand, n_pts) membership, chunked to bound memory on dense fields
    n_pts = len(shapes.points)
    covers = np.empty((len(candidates), n_pts), dtype=bool)
    chunk = 512
    for i in range(0, len(candidates), chunk):
        covers[i : i + chunk] = (
            pairwise_distances(candidates[i : i + chunk], shapes.points)
            <= radius + 1e-12
        )

    uncovered = np.ones(n_pts, dtype=bool)
    assignment = np.full(n_pts, UNASSIGNED, dtype=int)
    balls: list[RBall] = []
    covered_weight = 0.0
    while covered_weight / total < min_ratio - 1e-12:
        gains = covers[:, uncovered] @ weights[uncovered] if uncovered.any() else np.zeros(len(candidates))
        best = int(np.argmax(gains))
        if gains[best] <= 0:
            break
        newly = covers[best] & uncovered
        assignment[newly] = len(balls)
        balls.append(RBall(candidates[best], radius))
        covered_weight += float(weights[newly].sum())
        uncovered &= ~covers[best]
    return Covering(balls, covered_weight / total, assignment)


def asift_covering(max_log_tilt: float, radius: float) -> list[AffineMap]:
    """Deterministic fixed covering of the log-tilt disk by concentric rings.

    Returns pure tilt-rotation maps (lam = 1, psi = 0); the identity is
    always first.  Ring counts are grown until a dense test grid of each
    annulus is fully covered, which makes completeness independent of
    the radius chosen.
    """
    if not (max_log_tilt > 0 and radius > 0):
        raise InvalidParameter("max_log_tilt and radius must be > 0")
    centers = [TiltPoint.origin()]
    if max_log_tilt <= radius:
        return [c.to_affine() for c in centers]
    n_rings = int(np.ceil(max_log_tilt / radius))
    ring_step = max_log_tilt / n_rings
    for k in range(1, n_rings + 1):
        ring_r = k * ring_step
        lo = max(ring_r - ring_step / 2.0, 0.0)
        hi = min(ring_r + ring_step / 2.0, max_log_tilt)
        test_l = np.linspace(lo, hi, 9)
        test_phi = np.linspace(0.0, np.pi, 721)
        grid = [TiltPoint(l, p) for l in test_l for p in test_phi]
        n = 1
        while n <= 720:
            ring_centers = [TiltPoint(ring_r, i * np.pi / n) for i in range(n)]
            d = pairwise_distances(ring_centers, grid)
            if np.all(d.min(axis=0) <= radius + 1e-9):
                centers.extend(ring_centers)
                break
            n += 1
        else:
            raise InvalidParameter(
                f"cannot cover annulus at log-tilt {ring_r:g} with radius {radius:g}"
            )
    return [c.to_affine() for c in centers]


def assign_masks(field_points, covering: Covering) -> np.ndarray:
    """Label each (grid_index, TiltPoint) with its nearest containing ball.

    Points outside every ball get UNASSIGNED.  Exact distance ties break
    toward the lower ball index.  Returned as an array indexed by the
    grid indices present in ``field_points``.
    """
    if not field_points:
        return np.zeros(0, dtype=int)
    indices = np.array([gi for gi, _ in field_points], dtype=int)
    points = [p for _, p in field_points]
    labels = np.full(int(indices.max()) + 1, UNASSIGNED, dtype=int)
    if covering.balls:
        d = pairwise_distances([b.center for b in covering.balls], points)
        radii = np.array([b.radius for b in covering.balls])[:, None]
        inside = d <= radii + 1e-12
        d_masked = np.where(inside, d, np.inf)
        best = np.argmin(d_masked, axis=0)  # argmin takes the lowest index on ties
        hit = inside.any(axis=0)
        labels[indices[hit]] = best[hit]
    return labels
