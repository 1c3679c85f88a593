"""Star-convex Gaussian-process extent model and the single-target EKF.

The target contour is a radius function ``f(u)`` of the local angle ``u``
(relative to the heading). ``f`` is a GP with a periodic kernel and is
represented by its values at ``N`` fixed support angles, which are the last
``N`` slots of the spatial state.

Measurements are handled in the sensor frame. A global point ``z`` maps to
``R(-alpha_s) (z - p_s)`` so that a sensor-frame angle equals the global
angle minus the sensor orientation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Tuple

import numpy as np
from scipy.special import gammaln

from .densities import (
    HEADING,
    LOG_2PI,
    N_KIN,
    EtState,
    GammaDensity,
    GaussianDensity,
    SingularCovarianceError,
    condition_cov,
)

log = logging.getLogger(__name__)

CENTER_GUARD = 1e-6


def rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class GpHyperParams:
    sigma_f2: float = 2.0
    sigma_r2: float = 2.0
    l2: float = math.pi / 8
    support_angles: np.ndarray = field(
        default_factory=lambda: 2 * math.pi * np.arange(20) / 20
    )

    def __post_init__(self):
        u = np.asarray(self.support_angles, dtype=float)
        object.__setattr__(self, "support_angles", u)
        if u.size < 3:
            raise ValueError("need at least 3 support angles")
        if np.any(np.diff(u) <= 0):
            raise ValueError("support angles must be strictly increasing")
        if self.l2 <= 0 or self.sigma_f2 < 0 or self.sigma_r2 < 0:
            raise ValueError("invalid GP hyper-parameters")

    @classmethod
    def uniform(cls, n: int = 20, **kw) -> "GpHyperParams":
        return cls(support_angles=2 * math.pi * np.arange(n) / n, **kw)

    @property
    def n(self) -> int:
        return self.support_angles.size

    def kernel(self, u, v) -> np.ndarray:
        s = np.sin(np.abs(np.subtract.outer(u, v)) / 2)
        return self.sigma_f2 * np.exp(-2 * s * s / self.l2) + self.sigma_r2

    @cached_property
    def gram(self) -> np.ndarray:
        u = self.support_angles
        return self.kernel(u, u)

    @cached_property
    def gram_inv(self) -> np.ndarray:
        try:
            L = np.linalg.cholesky(self.gram)
        except np.linalg.LinAlgError:
            raise SingularCovarianceError(
                f"GP Gram matrix is singular (condition number {np.linalg.cond(self.gram):.3e})"
            ) from None
        Linv = np.linalg.inv(L)
        return Linv.T @ Linv

    def regress(self, theta) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized GP regression rows, residual variances and row derivatives."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        diff = np.subtract.outer(theta, self.support_angles)
        s = np.sin(diff / 2)
        periodic = self.sigma_f2 * np.exp(-2 * s * s / self.l2)
        k_tu = periodic + self.sigma_r2
        H = k_tu @ self.gram_inv
        kf = self.sigma_f2 + self.sigma_r2 - np.einsum("ij,ij->i", H, k_tu)
        dk = -np.sin(diff) / self.l2 * periodic
        dH = dk @ self.gram_inv
        return H, np.maximum(kf, 0.0), dH


@dataclass(frozen=True)
class MotionParams:
    T: float
    kinematic_F: np.ndarray
    kinematic_W: np.ndarray
    beta: float = 0.001
    eta: float = 1.11
    p_survival: float = 0.999

    def __post_init__(self):
        if self.T <= 0 or self.eta <= 0:
            raise ValueError("sampling time and rate forgetting factor must be positive")

    @classmethod
    def constant_velocity(cls, T=0.5, q=(0.01, 0.01, 0.001), **kw) -> "MotionParams":
        F = np.kron(np.array([[1.0, T], [0.0, 1.0]]), np.eye(3))
        W = np.kron(np.array([[T**3 / 3, T**2 / 2], [T**2 / 2, T]]), np.diag(q))
        return cls(T=T, kinematic_F=F, kinematic_W=W, **kw)


@dataclass(frozen=True)
class SensorPose:
    position: np.ndarray
    orientation: float
    meas_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        R = np.asarray(self.meas_cov, dtype=float)
        if R.shape != (2, 2) or not np.allclose(R, R.T) or np.linalg.eigvalsh(R)[0] <= 0:
            raise ValueError("measurement covariance must be a symmetric positive definite 2x2 matrix")
        object.__setattr__(self, "meas_cov", R)

    @property
    def to_sensor(self) -> np.ndarray:
        return rotation(-self.orientation)

    def global_to_sensor(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return (z - self.position) @ self.to_sensor.T


def kernel_eval(u: float, v: float, hp: GpHyperParams) -> float:
    return float(hp.kernel(u, v))


def gp_regress(theta_L: float, hp: GpHyperParams) -> Tuple[np.ndarray, float]:
    """Regression row ``K(theta, u) K(u, u)^-1`` and residual variance at one angle."""
    H, kf, _ = hp.regress(theta_L)
    return H[0], float(kf[0])


def _linearize(mean: np.ndarray, z_sensor: np.ndarray, pose: SensorPose, hp: GpHyperParams):
    """Predicted measurements, inflated noise and Jacobians for sensor-frame points.

    Returns ``(h, R_tilde, H, keep)`` for the detections whose distance from the
    predicted center exceeds the guard radius.
    """
    Q = pose.to_sensor
    yc_s = Q @ (mean[:2] - pose.position)
    d = z_sensor - yc_s
    rho = np.hypot(d[:, 0], d[:, 1])
    keep = rho > CENTER_GUARD
    d, rho = d[keep], rho[keep]
    e = d / rho[:, None]
    theta_s = np.arctan2(d[:, 1], d[:, 0])
    theta_l = theta_s - (mean[HEADING] - pose.orientation)
    Hf, kf, dHf = hp.regress(theta_l)
    yf = mean[N_KIN:]
    f = Hf @ yf
    fp = dHf @ yf

    h = yc_s + e * f[:, None]
    R_s = Q @ pose.meas_cov @ Q.T
    R_tilde = R_s + kf[:, None, None] * np.einsum("ni,nj->nij", e, e)

    n = e.shape[0]
    H = np.zeros((n, 2, mean.size))
    proj = np.eye(2) - np.einsum("ni,nj->nij", e, e)
    de_dyc = -(proj @ Q) / rho[:, None, None]
    dtheta_dyc = (np.stack([d[:, 1], -d[:, 0]], axis=1) @ Q) / (rho**2)[:, None]
    H[:, :, 0:2] = Q + f[:, None, None] * de_dyc + np.einsum("ni,n,nj->nij", e, fp, dtheta_dyc)
    H[:, :, HEADING] = -e * fp[:, None]
    H[:, :, N_KIN:] = np.einsum("ni,nj->nij", e, Hf)
    return h, R_tilde, H, keep


def _linearize_subset(mean, z_sensor, keep, pose, hp):
    """Linearize a fixed subset of detections, guarding against the center."""
    h, R_tilde, H, inner = _linearize(mean, z_sensor[keep], pose, hp)
    if inner.all():
        return h, R_tilde, H, keep
    # a detection fell onto the relinearized center: drop it from this pass
    sub = keep.copy()
    sub[np.flatnonzero(keep)[~inner]] = False
    return h, R_tilde, H, sub


def _check_center(mean, z_sensor, pose):
    yc_s = pose.to_sensor @ (mean[:2] - pose.position)
    if np.hypot(*(z_sensor - yc_s)) <= CENTER_GUARD:
        raise ValueError("measurement coincides with the predicted target center")


def measure_mean_cov(state_mean, z_global, pose: SensorPose, hp: GpHyperParams):
    """Sensor-frame predicted measurement and its inflated noise covariance."""
    mean = np.asarray(state_mean, dtype=float)
    zs = pose.global_to_sensor(z_global)
    _check_center(mean, zs, pose)
    h, R_tilde, _, _ = _linearize(mean, zs[None, :], pose, hp)
    return h[0], R_tilde[0]


def measure_jacobian(state_mean, z_global, pose: SensorPose, hp: GpHyperParams) -> np.ndarray:
    mean = np.asarray(state_mean, dtype=float)
    zs = pose.global_to_sensor(z_global)
    _check_center(mean, zs, pose)
    _, _, H, _ = _linearize(mean, zs[None, :], pose, hp)
    return H[0]


def process_model(mp: MotionParams, hp: GpHyperParams) -> Tuple[np.ndarray, np.ndarray]:
    """Full transition matrix and process noise over kinematics plus extent."""
    n = hp.n
    decay = math.exp(-mp.beta * mp.T)
    F = np.zeros((N_KIN + n, N_KIN + n))
    W = np.zeros_like(F)
    F[:N_KIN, :N_KIN] = mp.kinematic_F
    F[N_KIN:, N_KIN:] = decay * np.eye(n)
    W[:N_KIN, :N_KIN] = mp.kinematic_W
    W[N_KIN:, N_KIN:] = (1 - decay**2) * hp.gram
    return F, W


def predict_rate(rate: GammaDensity, eta: float) -> GammaDensity:
    return GammaDensity(rate.alpha / eta, rate.beta / eta)


def ekf_predict(e: EtState, mp: MotionParams, hp: GpHyperParams) -> EtState:
    F, W = process_model(mp, hp)
    g = e.spatial
    spatial = GaussianDensity(F @ g.mean, condition_cov(F @ g.cov @ F.T + W))
    return EtState(predict_rate(e.rate, mp.eta), spatial)


def rate_log_likelihood(rate: GammaDensity, n: int) -> float:
    """Log of the gamma-Poisson predictive factor for ``n`` detections."""
    a, b = rate.alpha, rate.beta
    return float(gammaln(a + n) - gammaln(a) + a * math.log(b) - (a + n) * math.log(b + 1))


def _innovation_loglik(innov, S, L, n, joint):
    if joint:
        sol = np.linalg.solve(L, innov)
        return float(-0.5 * (innov.size * LOG_2PI + sol @ sol) - np.log(np.diag(L)).sum())
    # product of per-detection terms using the diagonal blocks of S
    idx = np.arange(n)
    blocks = S.reshape(n, 2, n, 2)[idx, :, idx, :]
    nu = innov.reshape(n, 2)
    det = blocks[:, 0, 0] * blocks[:, 1, 1] - blocks[:, 0, 1] ** 2
    maha = (blocks[:, 1, 1] * nu[:, 0] ** 2 - 2 * blocks[:, 0, 1] * nu[:, 0] * nu[:, 1]
            + blocks[:, 0, 0] * nu[:, 1] ** 2) / det
    return float(np.sum(-LOG_2PI - 0.5 * np.log(det) - 0.5 * maha))


def ekf_update(e: EtState, detections: Sequence, pose: SensorPose, hp: GpHyperParams,
               joint: bool = True, iterations: int = 1) -> Tuple[EtState, float]:
    """Stacked EKF update of one target with a set of detections.

    Returns the updated state and the log predicted likelihood of the set:
    the gamma-Poisson factor plus the Gaussian innovation term. With ``joint``
    the innovation term is the density of the stacked innovation under the
    full covariance ``S``; otherwise it is the product of per-detection
    densities using the 2x2 diagonal blocks of ``S``.

    ``iterations > 1`` relinearizes the model at the updated mean (iterated
    EKF); covariance and likelihood use the last linearization.
    """
    Z = np.atleast_2d(np.asarray(detections, dtype=float))
    if Z.shape[0] == 0:
        raise ValueError("ekf_update needs at least one detection")
    n_det = Z.shape[0]
    rate = GammaDensity(e.rate.alpha + n_det, e.rate.beta + 1.0)
    loglik = rate_log_likelihood(e.rate, n_det)

    mean, P = e.spatial.mean, e.spatial.cov
    zs = pose.global_to_sensor(Z)
    x = mean
    for it in range(max(iterations, 1)):
        h, R_tilde, H, keep = _linearize(x, zs, pose, hp)
        if it == 0:
            keep0 = keep
        else:
            # keep the detection set of the first linearization
            h, R_tilde, H, keep = _linearize_subset(x, zs, keep0, pose, hp)
        n_kept = int(keep.sum())
        if n_kept == 0:
            break
        Hs = H.reshape(2 * n_kept, -1)
        # innovation of the model linearized at x, expressed around the prior mean
        innov = (zs[keep] - h).reshape(-1) - Hs @ (mean - x)
        PHt = P @ Hs.T
        S = Hs @ PHt
        idx = np.arange(n_kept)
        S.reshape(n_kept, 2, n_kept, 2)[idx, :, idx, :] += R_tilde
        S = 0.5 * (S + S.T)
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise SingularCovarianceError(
                f"innovation covariance is singular (condition number {np.linalg.cond(S):.3e})"
            ) from None
        Kt = np.linalg.solve(L.T, np.linalg.solve(L, PHt.T))  # gain transposed
        x = mean + Kt.T @ innov
    if n_kept < n_det:
        log.debug("rejected %d detection(s) at the predicted center", n_det - n_kept)
    if n_kept == 0:
        return EtState(rate, e.spatial), loglik
    new_mean = x
    new_cov = condition_cov(P - Kt.T @ Hs @ P)

    loglik += _innovation_loglik(innov, S, L, n_kept, joint)
    return EtState(rate, GaussianDensity(new_mean, new_cov)), loglik
