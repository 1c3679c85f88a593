import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from etpmb.densities import (
    BernoulliComponent,
    EtState,
    GammaDensity,
    GaussianDensity,
    PmbDensity,
    PoissonIntensity,
    PppComponent,
    SingularCovarianceError,
    condition_cov,
    gamma_mean,
    gamma_moment_match,
    gaussian_logpdf,
    kld,
    marginal_center,
    moment_match,
    symmetric_kld,
)

from .conftest import random_spd


def test_logpdf_standard_normal_at_zero():
    assert gaussian_logpdf([0.0], GaussianDensity([0.0], [[1.0]])) == pytest.approx(-0.9189385, abs=1e-7)


def test_logpdf_at_mean_is_normalizer():
    for d in (1, 2, 5, 26):
        g = GaussianDensity(np.arange(d, dtype=float), np.eye(d))
        assert gaussian_logpdf(g.mean, g) == pytest.approx(-d / 2 * math.log(2 * math.pi), abs=1e-12)


def test_logpdf_scaled_variance():
    assert gaussian_logpdf([2.0], GaussianDensity([0.0], [[4.0]])) == pytest.approx(-2.1120857, abs=1e-7)


def test_logpdf_matches_scipy():
    rng = np.random.default_rng(3)
    for _ in range(20):
        d = int(rng.integers(1, 6))
        P = random_spd(rng, d)
        m, x = rng.normal(size=d), rng.normal(size=d)
        expect = multivariate_normal(m, P).logpdf(x)
        assert gaussian_logpdf(x, GaussianDensity(m, P)) == pytest.approx(expect, rel=1e-10)


def test_singular_covariance_reports_condition_number():
    with pytest.raises(SingularCovarianceError, match="condition number"):
        gaussian_logpdf([0.0, 0.0], GaussianDensity([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]]))


def test_logpdf_integrates_to_one_on_grid():
    rng = np.random.default_rng(0)
    for _ in range(3):
        P = random_spd(rng, 2, 0.5)
        g = GaussianDensity(rng.normal(size=2), P)
        xs = np.linspace(-8, 8, 241)
        h = xs[1] - xs[0]
        total = sum(math.exp(gaussian_logpdf(g.mean + [a, b], g)) for a in xs for b in xs) * h * h
        assert total == pytest.approx(1.0, abs=1e-2)


@pytest.mark.parametrize("a,b,mean", [(10, 5, 2.0), (1, 1, 1.0), (15, 5.5, 2.7272727)])
def test_gamma_mean(a, b, mean):
    assert gamma_mean(GammaDensity(a, b)) == pytest.approx(mean, abs=1e-7)
    assert GammaDensity(a, b).mean == pytest.approx(mean, abs=1e-7)


@pytest.mark.parametrize("a,b", [(0, 1), (1, 0), (-1, 2)])
def test_gamma_rejects_nonpositive(a, b):
    with pytest.raises(ValueError):
        GammaDensity(a, b)


def _state(mean, cov):
    return EtState(GammaDensity(5, 1), GaussianDensity(mean, cov))


def test_marginal_center_of_identity():
    mean = np.arange(1.0, 27.0)
    c = marginal_center(_state(mean, np.eye(26)))
    np.testing.assert_array_equal(c.mean, [1.0, 2.0])
    np.testing.assert_array_equal(c.cov, np.eye(2))


def test_marginal_center_returns_block_exactly():
    mean = np.zeros(26)
    mean[:2] = [3, -4]
    cov = np.eye(26)
    cov[:2, :2] = [[2, 1], [1, 2]]
    c = marginal_center(_state(mean, cov))
    np.testing.assert_array_equal(c.mean, [3, -4])
    np.testing.assert_array_equal(c.cov, [[2, 1], [1, 2]])


def test_marginal_center_matches_projection_oracle():
    rng = np.random.default_rng(1)
    P = random_spd(rng, 26)
    m = rng.normal(size=26)
    A = np.zeros((2, 26))
    A[0, 0] = A[1, 1] = 1
    c = marginal_center(_state(m, P))
    np.testing.assert_allclose(c.mean, A @ m, atol=0)
    np.testing.assert_allclose(c.cov, A @ P @ A.T, atol=0)


@given(st.integers(0, 2**32 - 1))
def test_marginal_center_commutes_with_affine_map(seed):
    rng = np.random.default_rng(seed)
    P = random_spd(rng, 8)
    m = rng.normal(size=8)
    B = rng.normal(size=(2, 2))
    t = rng.normal(size=2)
    A = np.eye(8)
    A[:2, :2] = B
    pushed = _state(A @ m + np.r_[t, np.zeros(6)], A @ P @ A.T)
    c = marginal_center(_state(m, P))
    np.testing.assert_allclose(marginal_center(pushed).mean, B @ c.mean + t, atol=1e-12)
    np.testing.assert_allclose(marginal_center(pushed).cov, B @ c.cov @ B.T, atol=1e-12)


def test_condition_cov_symmetrizes_and_jitters():
    P = np.array([[1.0, 2.0], [2.0 + 1e-9, 4.0]])
    Q = condition_cov(P)
    np.testing.assert_array_equal(Q, Q.T)
    assert np.linalg.eigvalsh(Q)[0] >= -1e-9


def test_bernoulli_rejects_bad_probability():
    g = _state(np.zeros(2), np.eye(2))
    with pytest.raises(ValueError):
        BernoulliComponent(1.5, g, 0)


def test_pmb_rejects_duplicate_ids():
    g = _state(np.zeros(2), np.eye(2))
    with pytest.raises(ValueError, match="duplicate"):
        PmbDensity(PoissonIntensity(), [BernoulliComponent(0.5, g, 1), BernoulliComponent(0.5, g, 1)])


def test_intensity_mass_is_unnormalized_sum():
    g = GaussianDensity([0.0], [[1.0]])
    ppp = PoissonIntensity([PppComponent(0.3, g, GammaDensity(1, 1)), PppComponent(2.5, g, GammaDensity(1, 1))])
    assert ppp.mass == pytest.approx(2.8)
    with pytest.raises(ValueError):
        PppComponent(-0.1, g, GammaDensity(1, 1))


def test_kld_closed_form_one_dimensional():
    f, g = GaussianDensity([0.0], [[1.0]]), GaussianDensity([1.0], [[1.0]])
    assert kld(f, g) == pytest.approx(0.5)
    assert symmetric_kld(f, g) == pytest.approx(0.5)
    a, b = GaussianDensity([0.0], [[1.0]]), GaussianDensity([0.0], [[4.0]])
    # D(a||b) = 0.5 (1/4 - 1 + ln 4)
    assert kld(a, b) == pytest.approx(0.5 * (0.25 - 1 + math.log(4)))


@given(st.integers(0, 2**32 - 1))
def test_symmetric_kld_is_symmetric_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 7))
    f = GaussianDensity(rng.normal(size=d), random_spd(rng, d))
    g = GaussianDensity(rng.normal(size=d), random_spd(rng, d))
    assert symmetric_kld(f, g) == pytest.approx(symmetric_kld(g, f), abs=1e-12)
    assert symmetric_kld(f, g) >= 0
    assert symmetric_kld(f, g) == pytest.approx(0.5 * (kld(f, g) + kld(g, f)), rel=1e-9, abs=1e-12)
    assert symmetric_kld(f, f) == pytest.approx(0.0, abs=1e-10)


def test_moment_match_preserves_moments():
    rng = np.random.default_rng(5)
    gs = [GaussianDensity(rng.normal(size=3), random_spd(rng, 3)) for _ in range(4)]
    w = rng.uniform(0.1, 1, size=4)
    mm = moment_match(w, gs)
    wn = w / w.sum()
    mean = sum(wi * g.mean for wi, g in zip(wn, gs))
    second = sum(wi * (g.cov + np.outer(g.mean, g.mean)) for wi, g in zip(wn, gs))
    np.testing.assert_allclose(mm.mean, mean, atol=1e-12)
    np.testing.assert_allclose(mm.cov + np.outer(mm.mean, mm.mean), second, atol=1e-9)


def test_gamma_moment_match_preserves_mean_and_variance():
    gs = [GammaDensity(4, 2), GammaDensity(9, 1)]
    w = [0.25, 0.75]
    g = gamma_moment_match(w, gs)
    mean = 0.25 * 2 + 0.75 * 9
    second = 0.25 * (4 * 5 / 4) + 0.75 * (9 * 10)
    assert g.mean == pytest.approx(mean)
    assert g.alpha / g.beta**2 == pytest.approx(second - mean**2)
