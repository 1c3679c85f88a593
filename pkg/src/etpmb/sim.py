"""Ground truth and Lidar-like sensor simulation.

Targets are rectangles moving with constant velocity. A sensor casts rays
over its sector field of view; the nearest hit along each ray (over all
targets) becomes one detection with additive Gaussian noise in global
coordinates. Clutter is a Poisson number of points uniform on a box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .gp_extent import SensorPose


@dataclass(frozen=True)
class TruthTarget:
    center: np.ndarray
    heading: float
    velocity: np.ndarray
    turn_rate: float = 0.0
    length: float = 5.0
    width: float = 3.0
    birth_step: int = 0
    death_step: int = 10**9

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))
        if self.length <= 0 or self.width <= 0:
            raise ValueError("target length and width must be positive")

    def alive(self, step: int) -> bool:
        return self.birth_step <= step < self.death_step

    def corners(self) -> np.ndarray:
        """Rectangle vertices in counter-clockwise order, global frame."""
        hl, hw = self.length / 2, self.width / 2
        local = np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])
        c, s = math.cos(self.heading), math.sin(self.heading)
        return local @ np.array([[c, s], [-s, c]]) + self.center


@dataclass(frozen=True)
class SensorModel:
    pose: SensorPose
    opening_angle: float
    angular_resolution: float
    max_range: float = 300.0
    clutter_rate: float = 2.0
    clutter_region: tuple = ((-200.0, 200.0), (-200.0, 200.0))

    def __post_init__(self):
        if not 0 < self.opening_angle <= 2 * math.pi:
            raise ValueError("opening angle must lie in (0, 2*pi]")
        if self.angular_resolution <= 0:
            raise ValueError("angular resolution must be positive")
        region = tuple(tuple(float(v) for v in axis) for axis in self.clutter_region)
        object.__setattr__(self, "clutter_region", region)

    @property
    def clutter_area(self) -> float:
        (x0, x1), (y0, y1) = self.clutter_region
        return (x1 - x0) * (y1 - y0)

    def ray_angles(self) -> np.ndarray:
        n = int(math.floor(self.opening_angle / self.angular_resolution + 1e-9)) + 1
        return self.pose.orientation - self.opening_angle / 2 + self.angular_resolution * np.arange(n)

    def in_fov(self, points) -> np.ndarray:
        """Boolean mask of points inside the sector field of view."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = pts - self.pose.position
        rng = np.hypot(d[:, 0], d[:, 1])
        ang = np.arctan2(d[:, 1], d[:, 0]) - self.pose.orientation
        ang = (ang + math.pi) % (2 * math.pi) - math.pi
        return (rng <= self.max_range) & (np.abs(ang) <= self.opening_angle / 2 + 1e-12)

    def fov_depth(self, points) -> np.ndarray:
        """Approximate signed distance to the sector boundary, positive inside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = pts - self.pose.position
        rng = np.hypot(d[:, 0], d[:, 1])
        ang = np.arctan2(d[:, 1], d[:, 0]) - self.pose.orientation
        ang = (ang + math.pi) % (2 * math.pi) - math.pi
        if self.opening_angle >= 2 * math.pi:
            return self.max_range - rng
        side = rng * np.sin(np.clip(self.opening_angle / 2 - np.abs(ang), -math.pi / 2, math.pi / 2))
        return np.minimum(self.max_range - rng, side)


def step_truth(t: TruthTarget, T: float, process_cov: Optional[np.ndarray] = None,
               rng: Optional[np.random.Generator] = None) -> TruthTarget:
    """Advance one constant-velocity step, optionally with sampled process noise.

    ``process_cov`` is the 6x6 covariance over ``[x, y, heading, vx, vy, turn]``.
    """
    center = t.center + T * t.velocity
    heading = t.heading + T * t.turn_rate
    velocity, turn = t.velocity, t.turn_rate
    if process_cov is not None:
        w = rng.multivariate_normal(np.zeros(6), process_cov)
        center = center + w[:2]
        heading += w[2]
        velocity = velocity + w[3:5]
        turn += w[5]
    return replace(t, center=center, heading=heading, velocity=velocity, turn_rate=turn)


class Scan(NamedTuple):
    detections: np.ndarray  # (n, 2), global frame
    owners: np.ndarray  # (n,) index into the target list, -1 for clutter


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def cast_rays(s: SensorModel, targets: Sequence[TruthTarget], rng: Optional[np.random.Generator] = None,
              return_owners: bool = False):
    """Ray-cast detections of rectangular targets; nearest hit per ray wins.

    Noise ``N(0, R)`` is added when ``rng`` is given.
    """
    angles = s.ray_angles()
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    o = s.pose.position
    best = np.full(angles.size, np.inf)
    owner = np.full(angles.size, -1)
    for k, t in enumerate(targets):
        poly = t.corners()
        for a, b in zip(poly, np.roll(poly, -1, axis=0)):
            e = b - a
            denom = _cross(d, e)
            ao = a - o
            with np.errstate(divide="ignore", invalid="ignore"):
                rr = _cross(ao, e) / denom
                tt = _cross(ao, d) / denom
            hit = (np.abs(denom) > 1e-12) & (rr > 0) & (tt >= 0) & (tt <= 1) & (rr < best)
            best[hit] = rr[hit]
            owner[hit] = k
    hit = best <= s.max_range
    pts = o + d[hit] * best[hit, None]
    if rng is not None and pts.shape[0]:
        pts = pts + rng.multivariate_normal(np.zeros(2), s.pose.meas_cov, size=pts.shape[0])
    if return_owners:
        return Scan(pts, owner[hit])
    return pts


def sample_clutter(s: SensorModel, rng: np.random.Generator) -> np.ndarray:
    n = rng.poisson(s.clutter_rate) if s.clutter_rate > 0 else 0
    (x0, x1), (y0, y1) = s.clutter_region
    return np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)]).reshape(n, 2)


def scan(s: SensorModel, targets: Sequence[TruthTarget], noise_rng, clutter_rng) -> Scan:
    """Target detections plus clutter, with per-detection ownership."""
    hits = cast_rays(s, targets, noise_rng, return_owners=True)
    clutter = sample_clutter(s, clutter_rng)
    return Scan(np.vstack([hits.detections.reshape(-1, 2), clutter]),
                np.concatenate([hits.owners, np.full(len(clutter), -1)]))
