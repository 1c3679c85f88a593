"""Single-object and multi-object density types.

Slot order of the spatial state is fixed:
``[x, y, heading, vx, vy, heading_rate, f_1 ... f_N]`` where ``f_i`` are the
extent radii at the GP support angles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
JITTER = 1e-9

# slot indices into the spatial state
POS = slice(0, 2)
HEADING = 2
VEL = slice(3, 5)
TURN = 5
KIN = slice(0, 6)
N_KIN = 6


class SingularCovarianceError(np.linalg.LinAlgError):
    """Raised when a covariance cannot be factorized."""


def condition_cov(P: np.ndarray) -> np.ndarray:
    """Symmetrize ``P`` and add jitter if its smallest eigenvalue is tiny."""
    P = 0.5 * (P + P.T)
    if P.size and np.linalg.eigvalsh(P)[0] < JITTER:
        P = P + JITTER * np.eye(P.shape[0])
    return P


@dataclass(frozen=True)
class GaussianDensity:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"mean has dim {mean.size} but cov has shape {cov.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def conditioned(self) -> "GaussianDensity":
        return GaussianDensity(self.mean, condition_cov(self.cov))


@dataclass(frozen=True)
class GammaDensity:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"gamma parameters must be positive, got ({self.alpha}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.alpha / self.beta


@dataclass(frozen=True)
class EtState:
    """Extended-target state: measurement-rate gamma and spatial Gaussian."""

    rate: GammaDensity
    spatial: GaussianDensity

    @property
    def n_extent(self) -> int:
        return self.spatial.dim - N_KIN


@dataclass(frozen=True)
class BernoulliComponent:
    r: float
    state: EtState
    track_id: int

    def __post_init__(self):
        if not (-1e-12 <= self.r <= 1 + 1e-12):
            raise ValueError(f"existence probability out of range: {self.r}")
        object.__setattr__(self, "r", float(min(max(self.r, 0.0), 1.0)))


@dataclass(frozen=True)
class PppComponent:
    weight: float
    spatial: GaussianDensity
    rate_prior: GammaDensity

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"PPP weight must be nonnegative, got {self.weight}")


@dataclass(frozen=True)
class PoissonIntensity:
    """Unnormalized Gaussian-mixture intensity of undetected targets."""

    components: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def mass(self) -> float:
        return float(sum(c.weight for c in self.components))

    def __len__(self) -> int:
        return len(self.components)

    def __add__(self, other: "PoissonIntensity") -> "PoissonIntensity":
        return PoissonIntensity(self.components + other.components)

    def scaled(self, factor: float) -> "PoissonIntensity":
        return PoissonIntensity(tuple(replace(c, weight=c.weight * factor) for c in self.components))

    def evaluate(self, x: np.ndarray) -> float:
        """Intensity value at spatial point ``x`` (same dimension as the components)."""
        return float(sum(c.weight * math.exp(gaussian_logpdf(x, c.spatial)) for c in self.components))

    def pruned(self, threshold: float, max_components: int | None = None) -> "PoissonIntensity":
        comps = [c for c in self.components if c.weight >= threshold]
        if max_components is not None and len(comps) > max_components:
            comps = sorted(comps, key=lambda c: -c.weight)[:max_components]
        return PoissonIntensity(tuple(comps))


@dataclass(frozen=True)
class PmbDensity:
    ppp: PoissonIntensity = field(default_factory=PoissonIntensity)
    bernoullis: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "bernoullis", tuple(self.bernoullis))
        ids = [b.track_id for b in self.bernoullis]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate track ids in PMB: {ids}")

    @property
    def expected_cardinality(self) -> float:
        return self.ppp.mass + sum(b.r for b in self.bernoullis)


def _cholesky(P: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(P)
        raise SingularCovarianceError(
            f"covariance is not positive definite (condition number {cond:.3e})"
        ) from None


def gaussian_logpdf(x, g: GaussianDensity) -> float:
    """Log of the Gaussian density ``g`` evaluated at ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != g.mean.shape:
        raise ValueError(f"point has dim {x.size}, density has dim {g.dim}")
    L = _cholesky(g.cov)
    sol = np.linalg.solve(L, x - g.mean)
    return float(-0.5 * (g.dim * LOG_2PI + sol @ sol) - np.log(np.diag(L)).sum())


def gamma_mean(g: GammaDensity) -> float:
    return g.alpha / g.beta


def marginal(g: GaussianDensity, idx) -> GaussianDensity:
    idx = np.arange(g.dim)[idx] if isinstance(idx, slice) else np.asarray(idx)
    return GaussianDensity(g.mean[idx], g.cov[np.ix_(idx, idx)])


def marginal_center(e: EtState) -> GaussianDensity:
    """2-D Gaussian over the target center position."""
    return marginal(e.spatial, POS)


def moment_match(weights: Sequence[float], gaussians: Sequence[GaussianDensity]) -> GaussianDensity:
    """Single Gaussian with the first two moments of a weighted mixture."""
    w = np.asarray(weights, dtype=float)
    if w.sum() <= 0:
        w = np.ones_like(w)
    w = w / w.sum()
    means = np.stack([g.mean for g in gaussians])
    mean = w @ means
    cov = np.zeros((mean.size, mean.size))
    for wi, g in zip(w, gaussians):
        d = g.mean - mean
        cov += wi * (g.cov + np.outer(d, d))
    return GaussianDensity(mean, condition_cov(cov))


def gamma_moment_match(weights: Sequence[float], gammas: Sequence[GammaDensity]) -> GammaDensity:
    """Single gamma matching mean and variance of a gamma mixture."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    a = np.array([g.alpha for g in gammas])
    b = np.array([g.beta for g in gammas])
    m = w @ (a / b)
    second = w @ (a * (a + 1) / b**2)
    var = max(second - m * m, 1e-12)
    return GammaDensity(m * m / var, m / var)


def symmetric_kld(f: GaussianDensity, g: GaussianDensity) -> float:
    """Half the sum of the two Kullback-Leibler divergences between Gaussians."""
    d = f.mean - g.mean
    Pf_inv = np.linalg.inv(f.cov)
    Pg_inv = np.linalg.inv(g.cov)
    n = f.dim
    # log-determinant terms cancel in the symmetric sum
    val = 0.5 * (np.trace(Pg_inv @ f.cov) + np.trace(Pf_inv @ g.cov) - 2 * n + d @ (Pf_inv + Pg_inv) @ d)
    return max(float(0.5 * val), 0.0)  # rounding can go slightly negative


def kld(f: GaussianDensity, g: GaussianDensity) -> float:
    """KL divergence D(f || g) between Gaussians."""
    d = g.mean - f.mean
    Pg_inv = np.linalg.inv(g.cov)
    _, ld_f = np.linalg.slogdet(f.cov)
    _, ld_g = np.linalg.slogdet(g.cov)
    return float(0.5 * (np.trace(Pg_inv @ f.cov) + d @ Pg_inv @ d - f.dim + ld_g - ld_f))

