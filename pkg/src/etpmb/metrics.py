"""Performance metrics: GOSPA, shape IOU and Monte-Carlo aggregation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .assignment import solve
from .densities import HEADING, N_KIN, EtState
from .gp_extent import GpHyperParams

MIN_RADIUS = 0.01


@dataclass(frozen=True)
class GospaParams:
    c: float = 20.0
    p: float = 2.0
    alpha: float = 2.0

    def __post_init__(self):
        if not (self.c > 0 and self.p >= 1 and 0 < self.alpha <= 2):
            raise ValueError(f"invalid GOSPA parameters {self}")


def gospa(estimates, truths, gp: GospaParams = GospaParams()) -> float:
    """GOSPA distance between two finite point sets (rows are points)."""
    X = np.asarray(estimates, dtype=float).reshape(-1, 2) if len(estimates) else np.zeros((0, 2))
    Y = np.asarray(truths, dtype=float).reshape(-1, 2) if len(truths) else np.zeros((0, 2))
    if len(X) > len(Y):
        X, Y = Y, X
    n, m = len(X), len(Y)
    total = gp.c**gp.p / gp.alpha * (m - n)
    if n:
        dist = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2)
        _, cost = solve(np.minimum(dist, gp.c) ** gp.p)
        total += cost
    return float(total ** (1.0 / gp.p))


def associate(estimates, truths, c: float = 20.0) -> dict:
    """Truth index -> estimate index under the GOSPA assignment, for pairs closer than ``c``."""
    X = np.asarray(estimates, dtype=float).reshape(-1, 2)
    Y = np.asarray(truths, dtype=float).reshape(-1, 2)
    if not len(X) or not len(Y):
        return {}
    dist = np.linalg.norm(Y[:, None, :] - X[None, :, :], axis=2)
    cols, _ = solve(np.minimum(dist, c))
    return {i: int(j) for i, j in enumerate(cols) if j >= 0 and dist[i, j] < c}


@dataclass(frozen=True)
class Polygon:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("a polygon needs at least 3 two-dimensional vertices")
        object.__setattr__(self, "vertices", v)

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)


def polygon_area(v: np.ndarray) -> float:
    """Signed shoelace area (positive for counter-clockwise order)."""
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def shape_polygon(e: EtState, hp: GpHyperParams, n_angles: int = 100) -> Polygon:
    """Contour of the posterior-mean extent sampled at ``n_angles`` local angles."""
    if n_angles < 4:
        raise ValueError("need at least 4 contour samples")
    m = e.spatial.mean
    u = 2 * math.pi * np.arange(n_angles) / n_angles
    H, _, _ = hp.regress(u)
    radius = np.maximum(H @ m[N_KIN:], MIN_RADIUS)
    ang = u + m[HEADING]
    return Polygon(m[:2] + radius[:, None] * np.column_stack([np.cos(ang), np.sin(ang)]))


def _clip(subject: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Keep the part of ``subject`` left of the directed edge a->b."""
    if len(subject) == 0:
        return subject
    e = b - a
    side = e[0] * (subject[:, 1] - a[1]) - e[1] * (subject[:, 0] - a[0])
    out = []
    n = len(subject)
    for i in range(n):
        p, q = subject[i], subject[(i + 1) % n]
        sp, sq = side[i], side[(i + 1) % n]
        if sp >= 0:
            out.append(p)
        if (sp >= 0) != (sq >= 0):
            out.append(p + (q - p) * (sp / (sp - sq)))
    return np.array(out).reshape(-1, 2)


def iou(truth: Polygon, estimate: Polygon) -> float:
    """Intersection over union of a convex truth polygon and any simple estimate."""
    t = truth.vertices
    if polygon_area(t) < 0:
        t = t[::-1]
    est = estimate.vertices
    if polygon_area(est) < 0:
        est = est[::-1]
    a_t, a_e = polygon_area(t), polygon_area(est)
    if a_t <= 0 or a_e <= 0:
        return 0.0
    inter = est
    for a, b in zip(t, np.roll(t, -1, axis=0)):
        inter = _clip(inter, a, b)
    a_i = max(polygon_area(inter), 0.0)
    return float(a_i / (a_t + a_e - a_i))


class Summary(NamedTuple):
    per_step: np.ndarray
    time_average: float


def aggregate(runs: Sequence[Sequence[float]]) -> Summary:
    """Mean over runs per step and the time average of that mean."""
    lengths = {len(r) for r in runs}
    if len(lengths) != 1:
        raise ValueError(f"all runs must have the same length, got lengths {sorted(lengths)}")
    per_step = np.mean(np.asarray(runs, dtype=float), axis=0)
    return Summary(per_step, float(per_step.mean()))
