import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from etpmb.densities import EtState, GammaDensity, GaussianDensity, N_KIN
from etpmb.gp_extent import (
    GpHyperParams,
    MotionParams,
    SensorPose,
    ekf_predict,
    ekf_update,
    gp_regress,
    kernel_eval,
    measure_jacobian,
    measure_mean_cov,
    predict_rate,
    process_model,
    rate_log_likelihood,
)

from .conftest import random_spd


def random_case(rng, hp):
    mean = np.zeros(N_KIN + hp.n)
    mean[:2] = rng.uniform(-50, 50, 2)
    mean[2] = rng.uniform(-math.pi, math.pi)
    mean[3:6] = rng.normal(size=3)
    mean[N_KIN:] = rng.uniform(1.0, 3.0, hp.n)
    pose = SensorPose(rng.uniform(-100, 100, 2), rng.uniform(-math.pi, math.pi), np.diag(rng.uniform(0.01, 1, 2)))
    ang = rng.uniform(-math.pi, math.pi)
    z = mean[:2] + rng.uniform(0.5, 4.0) * np.array([math.cos(ang), math.sin(ang)])
    return mean, z, pose


# --------------------------------------------------------------------- kernel


def test_kernel_at_zero_lag(hp):
    assert kernel_eval(0.3, 0.3, hp) == pytest.approx(4.0, abs=1e-12)


def test_kernel_at_half_turn(hp):
    expect = 2 + 2 * math.exp(-2 * 1.0 / (math.pi / 8))  # sin(pi/2)^2 = 1
    assert kernel_eval(0.0, math.pi, hp) == pytest.approx(expect, abs=1e-12)
    assert kernel_eval(0.0, math.pi, hp) == pytest.approx(2.012276, abs=1e-5)


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_kernel_is_two_pi_periodic(u, v):
    hp = GpHyperParams()
    assert abs(kernel_eval(u + 2 * math.pi, v, hp) - kernel_eval(u, v, hp)) < 1e-12


@given(st.lists(st.floats(0, 2 * math.pi - 1e-3), min_size=3, max_size=12, unique=True))
def test_gram_is_symmetric_psd(angles):
    u = np.sort(np.asarray(angles))
    if np.any(np.diff(u) < 1e-6):
        return
    hp = GpHyperParams(support_angles=u)
    K = hp.gram
    np.testing.assert_allclose(K, K.T, atol=0)
    assert np.linalg.eigvalsh(K)[0] > -1e-9


def test_hyperparameter_validation():
    with pytest.raises(ValueError):
        GpHyperParams(support_angles=np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        GpHyperParams(support_angles=np.array([0.0, 2.0, 1.0]))
    with pytest.raises(ValueError):
        GpHyperParams(l2=0.0)


# --------------------------------------------------------------------- regression


def test_regression_interpolates_support_angles(hp):
    for i in (0, 7, 19):
        row, kf = gp_regress(hp.support_angles[i], hp)
        np.testing.assert_allclose(row, np.eye(hp.n)[i], atol=1e-8)
        assert kf == pytest.approx(0.0, abs=1e-8)


def test_regression_between_support_angles_matches_linear_solve(hp):
    theta = 0.5 * (hp.support_angles[3] + hp.support_angles[4])
    row, kf = gp_regress(theta, hp)
    k = hp.kernel(np.array([theta]), hp.support_angles)[0]
    oracle_row = np.linalg.solve(hp.gram, k)
    np.testing.assert_allclose(row, oracle_row, atol=1e-9)
    assert kf == pytest.approx(4.0 - k @ oracle_row, abs=1e-9)
    assert kf > 0
    assert 0 < row.sum() < 1.5


def test_regression_is_periodic(hp):
    a, _ = gp_regress(0.77, hp)
    b, _ = gp_regress(0.77 + 2 * math.pi, hp)
    np.testing.assert_allclose(a @ np.full(hp.n, 1.3), b @ np.full(hp.n, 1.3), atol=1e-10)


# --------------------------------------------------------------------- measurement model


def test_predicted_measurement_for_circular_target(hp):
    rho = 1.7
    mean = np.zeros(N_KIN + hp.n)
    mean[N_KIN:] = rho
    pose = SensorPose(np.array([-10.0, 0.0]), 0.0, 0.1 * np.eye(2))
    h, R = measure_mean_cov(mean, np.array([3.0, 0.0]), pose, hp)
    # with equal radii the GP mean is not exactly rho between support points
    f = gp_regress(0.0, hp)[0] @ mean[N_KIN:]
    np.testing.assert_allclose(h, [10 + f, 0.0], atol=1e-12)
    assert f == pytest.approx(rho, abs=1e-9)


def test_inflated_noise_is_rank_one_update(hp):
    rng = np.random.default_rng(2)
    for _ in range(20):
        mean, z, pose = random_case(rng, hp)
        _, R = measure_mean_cov(mean, z, pose, hp)
        Q = pose.to_sensor
        D = R - Q @ pose.meas_cov @ Q.T
        ev = np.linalg.eigvalsh(0.5 * (D + D.T))
        assert ev[0] == pytest.approx(0.0, abs=1e-10)
        assert ev[1] >= -1e-12


def test_measurement_is_frame_invariant(hp):
    rng = np.random.default_rng(4)
    for _ in range(10):
        mean, z, pose = random_case(rng, hp)
        h, R = measure_mean_cov(mean, z, pose, hp)
        d = rng.uniform(-math.pi, math.pi)
        c, s = math.cos(d), math.sin(d)
        rot = np.array([[c, -s], [s, c]])
        m2 = mean.copy()
        m2[:2] = rot @ mean[:2]
        m2[2] += d
        p2 = SensorPose(rot @ pose.position, pose.orientation + d, rot @ pose.meas_cov @ rot.T)
        h2, R2 = measure_mean_cov(m2, rot @ z, p2, hp)
        np.testing.assert_allclose(h2, h, atol=1e-9)
        np.testing.assert_allclose(R2, R, atol=1e-9)


def test_center_coincidence_is_rejected(hp, pose):
    mean = np.zeros(N_KIN + hp.n)
    mean[N_KIN:] = 2
    with pytest.raises(ValueError, match="center"):
        measure_mean_cov(mean, mean[:2], pose, hp)


def finite_difference_jacobian(mean, z, pose, hp, step=1e-3):
    """Fourth-order central differences of the predicted measurement."""
    f = lambda x: measure_mean_cov(x, z, pose, hp)[0]  # noqa: E731
    J = np.zeros((2, mean.size))
    for k in range(mean.size):
        e = np.zeros(mean.size)
        e[k] = step
        J[:, k] = (-f(mean + 2 * e) + 8 * f(mean + e) - 8 * f(mean - e) + f(mean - 2 * e)) / (12 * step)
    return J


def test_jacobian_velocity_columns_are_zero(hp):
    rng = np.random.default_rng(8)
    mean, z, pose = random_case(rng, hp)
    H = measure_jacobian(mean, z, pose, hp)
    np.testing.assert_array_equal(H[:, 3:6], 0.0)


def test_jacobian_extent_block_is_direction_times_row(hp):
    rng = np.random.default_rng(9)
    mean, z, pose = random_case(rng, hp)
    H = measure_jacobian(mean, z, pose, hp)
    zs = pose.global_to_sensor(z)
    yc = pose.to_sensor @ (mean[:2] - pose.position)
    e = (zs - yc) / np.linalg.norm(zs - yc)
    theta_l = math.atan2(e[1], e[0]) - (mean[2] - pose.orientation)
    row, _ = gp_regress(theta_l, hp)
    np.testing.assert_allclose(H[:, N_KIN:], np.outer(e, row), atol=1e-12)


def test_jacobian_matches_finite_differences(hp):
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(25):
        mean, z, pose = random_case(rng, hp)
        H = measure_jacobian(mean, z, pose, hp)
        J = finite_difference_jacobian(mean, z, pose, hp)
        worst = max(worst, float(np.max(np.abs(H - J) / np.maximum(np.abs(J), 1e-3))))
    assert worst < 1e-4


# --------------------------------------------------------------------- prediction


def test_prediction_without_motion_or_decay_is_identity(hp):
    mp = MotionParams(T=0.5, kinematic_F=np.eye(6), kinematic_W=np.zeros((6, 6)), beta=0.0)
    rng = np.random.default_rng(1)
    P = random_spd(rng, 26)
    e = EtState(GammaDensity(10, 5), GaussianDensity(rng.normal(size=26), P))
    out = ekf_predict(e, mp, hp)
    np.testing.assert_allclose(out.spatial.mean, e.spatial.mean, atol=0)
    np.testing.assert_allclose(out.spatial.cov, P, atol=1e-12)


def test_rate_prediction_preserves_mean(motion):
    g = predict_rate(GammaDensity(10, 5), motion.eta)
    assert g.alpha == pytest.approx(9.009009, abs=1e-6)
    assert g.beta == pytest.approx(4.504504, abs=1e-6)
    assert g.mean == pytest.approx(2.0, abs=1e-12)


def test_constant_velocity_prediction(hp, motion):
    mean = np.zeros(26)
    mean[3] = 2.0
    e = EtState(GammaDensity(5, 1), GaussianDensity(mean, np.eye(26)))
    out = ekf_predict(e, motion, hp)
    np.testing.assert_allclose(out.spatial.mean[:2], [1.0, 0.0], atol=1e-12)


def test_process_model_blocks(hp, motion):
    F, W = process_model(motion, hp)
    T = 0.5
    np.testing.assert_allclose(F[:6, :6], np.kron([[1, T], [0, 1]], np.eye(3)), atol=0)
    np.testing.assert_allclose(F[6:, 6:], math.exp(-0.001 * T) * np.eye(20), atol=1e-15)
    np.testing.assert_allclose(W[6:, 6:], (1 - math.exp(-2 * 0.001 * T)) * hp.gram, atol=1e-15)
    Wk = np.kron([[T**3 / 3, T**2 / 2], [T**2 / 2, T]], np.diag([0.01, 0.01, 0.001]))
    np.testing.assert_allclose(W[:6, :6], Wk, atol=1e-15)


# --------------------------------------------------------------------- update


def test_rate_update_counts_detections(hp, pose):
    rng = np.random.default_rng(3)
    mean, _, _ = random_case(rng, hp)
    e = EtState(GammaDensity(9, 4.5), GaussianDensity(mean, np.eye(26)))
    Z = mean[:2] + rng.normal(scale=2.0, size=(6, 2))
    out, _ = ekf_update(e, Z, pose, hp)
    assert (out.rate.alpha, out.rate.beta) == (15, 5.5)


def test_rate_likelihood_is_negative_binomial_times_factorial():
    # set-density convention: the n! ordering factor stays with the spatial part
    from scipy.stats import nbinom
    g = GammaDensity(4.0, 1.5)
    for n in range(6):
        expect = nbinom.logpmf(n, g.alpha, g.beta / (g.beta + 1)) + math.lgamma(n + 1)
        assert rate_log_likelihood(g, n) == pytest.approx(expect, rel=1e-12)


def test_gaussian_term_at_zero_innovation(hp):
    """Single detection exactly on the predicted contour with unit innovation covariance."""
    mean = np.zeros(26)
    mean[6:] = 2.0
    pose = SensorPose(np.array([-10.0, 0.0]), 0.0, np.eye(2))
    e = EtState(GammaDensity(5, 1), GaussianDensity(mean, 1e-12 * np.eye(26)))
    z = np.array([2.0, 0.0])
    h, R = measure_mean_cov(mean, z, pose, hp)
    z_on = pose.position + h  # sensor frame equals global frame for this pose
    _, ll = ekf_update(e, [z_on], pose, hp)
    gauss = ll - rate_log_likelihood(e.rate, 1)
    expect = -math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(R))
    assert gauss == pytest.approx(expect, abs=1e-6)
    assert np.allclose(R, np.eye(2), atol=1e-8)
    assert gauss == pytest.approx(-math.log(2 * math.pi), abs=1e-6)


def test_blockwise_and_joint_agree_for_one_detection(hp, pose):
    rng = np.random.default_rng(12)
    mean, z, _ = random_case(rng, hp)
    e = EtState(GammaDensity(5, 1), GaussianDensity(mean, random_spd(rng, 26, 0.2)))
    _, a = ekf_update(e, [z], pose, hp, joint=True)
    _, b = ekf_update(e, [z], pose, hp, joint=False)
    assert a == pytest.approx(b, rel=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 4))
def test_update_contracts_covariance(seed, n_det, iterations):
    hp = GpHyperParams()
    rng = np.random.default_rng(seed)
    mean, _, pose = random_case(rng, hp)
    P = random_spd(rng, 26, 0.3)
    e = EtState(GammaDensity(5, 1), GaussianDensity(mean, P))
    ang = rng.uniform(-math.pi, math.pi, n_det)
    Z = mean[:2] + rng.uniform(1, 3, n_det)[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])
    out, ll = ekf_update(e, Z, pose, hp, iterations=iterations)
    assert np.isfinite(ll)
    assert np.linalg.eigvalsh(P - out.spatial.cov)[0] >= -1e-9
    C = out.spatial.cov
    assert np.linalg.eigvalsh(0.5 * (C + C.T))[0] >= -1e-9


def test_update_rejects_empty_set(hp, pose):
    e = EtState(GammaDensity(5, 1), GaussianDensity(np.zeros(26), np.eye(26)))
    with pytest.raises(ValueError):
        ekf_update(e, np.zeros((0, 2)), pose, hp)
