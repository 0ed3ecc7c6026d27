import math
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from earlylmc import mixture as mx
from earlylmc.mixture import (
    CustomComponent, DimensionError, Mixture, RescaleWarning, audit_custom_component,
)

from conftest import random_gaussian_mixture


# ----------------------------------------------------------------------------
# Construction
# ----------------------------------------------------------------------------


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        Mixture.gaussian([[0.0], [1.0]], [1.0, 1.0], [0.5, 0.6])
    with pytest.raises(ValueError):
        Mixture.gaussian([[0.0], [1.0]], [1.0, 1.0], [1.0, 0.0])


def test_gaussian_alpha_beta_from_covariance():
    m = Mixture.gaussian([[0.0, 0.0]], [np.diag([4.0, 0.5])], [1.0])
    assert m.alpha == pytest.approx(0.25)
    assert m.beta == pytest.approx(2.0)


def test_cov_shapes_accepted():
    m = Mixture.gaussian([[0.0, 0.0], [1.0, 1.0]], [2.0, [1.0, 3.0]], [0.5, 0.5])
    np.testing.assert_allclose(m.components[0].cov, 2.0 * np.eye(2))
    np.testing.assert_allclose(m.components[1].cov, np.diag([1.0, 3.0]))


def test_beta_flag_warns():
    with pytest.warns(RescaleWarning):
        Mixture.gaussian([[0.0]], [2.0], [1.0], enforce_beta_ge_1=True)


# ----------------------------------------------------------------------------
# log_density
# ----------------------------------------------------------------------------


def test_log_density_standard_gaussian():
    m = Mixture.gaussian([[0.0]], [1.0], [1.0])
    assert mx.log_density(m, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)


def test_log_density_symmetric_pair(two_modes):
    expected = math.log(math.exp(-4.5) / math.sqrt(2 * math.pi))
    assert mx.log_density(two_modes, [0.0]) == pytest.approx(expected, abs=1e-14)


def test_log_density_naive_summation_oracle():
    m = Mixture.gaussian([[0.0], [4.0]], [1.0, 1.0], [0.5, 0.5])
    naive = math.log(sum(0.5 * math.exp(-0.5 * (1.0 - u) ** 2) / math.sqrt(2 * math.pi) for u in (0.0, 4.0)))
    assert abs(mx.log_density(m, [1.0]) - naive) <= 1e-12


def test_log_density_far_separated_no_underflow():
    m = Mixture.gaussian([[-60.0], [60.0]], [1.0, 1.0], [0.5, 0.5])
    v = mx.log_density(m, [0.0])
    assert np.isfinite(v)
    assert v == pytest.approx(-1800.0 - 0.5 * math.log(2 * math.pi), rel=1e-12)


def test_log_density_errors(two_modes):
    with pytest.raises(DimensionError):
        mx.log_density(two_modes, [0.0, 1.0])
    with pytest.raises(ValueError):
        mx.log_density(two_modes, [np.nan])


# ----------------------------------------------------------------------------
# score / hessian
# ----------------------------------------------------------------------------


def test_score_symmetric_midpoint(two_modes):
    assert mx.score(two_modes, [0.0]) == pytest.approx([0.0], abs=1e-15)


def test_score_single_gaussian_closed_form():
    cov = np.array([[2.0, 0.3], [0.3, 1.0]])
    u = np.array([1.0, -2.0])
    m = Mixture.gaussian([u], [cov], [1.0])
    x = np.array([0.4, 0.7])
    np.testing.assert_allclose(mx.score(m, x), -np.linalg.solve(cov, x - u), rtol=1e-12)


def test_score_finite_difference_1d():
    m = Mixture.gaussian([[0.0], [4.0]], [1.0, 1.0], [0.5, 0.5])
    e = 1e-5
    fd = (mx.log_density(m, [1.0 + e]) - mx.log_density(m, [1.0 - e])) / (2 * e)
    assert abs(mx.score(m, [1.0])[0] - fd) <= 1e-6


def test_hessian_single_gaussian():
    cov = np.array([[2.0, 0.3], [0.3, 1.0]])
    m = Mixture.gaussian([[0.0, 0.0]], [cov], [1.0])
    np.testing.assert_allclose(mx.hessian_log_density(m, [0.3, 0.1]), -np.linalg.inv(cov), rtol=1e-12)


def test_hessian_second_difference(two_modes):
    e = 1e-4
    f = lambda t: mx.log_density(two_modes, [t])
    fd = (f(e) - 2 * f(0.0) + f(-e)) / e**2
    # at x = 0: -1 + 9 = 8
    assert abs(mx.hessian_log_density(two_modes, [0.0])[0, 0] - fd) <= 1e-5
    assert mx.hessian_log_density(two_modes, [0.0])[0, 0] == pytest.approx(8.0, abs=1e-12)


def test_smoothness_preserved_beta_le_one(rng):
    m = Mixture.gaussian(rng.normal(0, 3, (3, 2)), [1.5, [1.0, 2.0], 1.2], [0.3, 0.3, 0.4])
    assert m.beta <= 1.0
    X = rng.normal(0, 4, (100, 2))
    H = mx.hessian_log_density(m, X)
    lam = np.linalg.eigvalsh(-H)
    assert lam.max() <= 1.0 + 1e-12


@pytest.mark.parametrize("d", [1, 2, 8])
def test_score_and_hessian_match_finite_differences(d):
    rng = np.random.default_rng(d)
    for _ in range(10):
        m = random_gaussian_mixture(rng, d, int(rng.integers(1, 4)))
        x = rng.normal(0, 2, d)
        s = mx.score(m, x)
        H = mx.hessian_log_density(m, x)
        e = 1e-5
        for k in range(d):
            dx = np.zeros(d)
            dx[k] = e
            fd = (mx.log_density(m, x + dx) - mx.log_density(m, x - dx)) / (2 * e)
            assert abs(s[k] - fd) <= 1e-5 * max(1.0, abs(s[k]))
            col = (mx.score(m, x + dx) - mx.score(m, x - dx)) / (2 * e)
            np.testing.assert_allclose(H[:, k], col, atol=1e-4 * max(1.0, np.abs(H).max()))
        np.testing.assert_allclose(H, H.T, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), d=st.sampled_from([1, 2, 3]), K=st.integers(1, 4))
def test_score_norm_below_component_max(seed, d, K):
    rng = np.random.default_rng(seed)
    m = random_gaussian_mixture(rng, d, K)
    X = rng.normal(0, 3, (20, d))
    s = np.linalg.norm(mx.score(m, X), axis=1)
    g = np.linalg.norm(m.component_grad_potentials(X), axis=2).max(axis=1)
    assert np.all(s <= g * (1 + 1e-12) + 1e-12)
    lam = np.linalg.eigvalsh(-mx.hessian_log_density(m, X))
    assert np.all(lam.max(axis=1) <= m.beta * (1 + 1e-10))


# ----------------------------------------------------------------------------
# responsibilities / i_max
# ----------------------------------------------------------------------------


def test_responsibilities_trivial(two_modes):
    m1 = Mixture.gaussian([[0.0]], [1.0], [1.0])
    assert mx.responsibilities(m1, [3.0]) == pytest.approx([1.0])
    np.testing.assert_allclose(mx.responsibilities(two_modes, [0.0]), [0.5, 0.5], atol=1e-15)


def test_responsibilities_logistic_oracle():
    m = Mixture.gaussian([[0.0], [4.0]], [1.0, 1.0], [0.5, 0.5])
    sig = lambda z: 1.0 / (1.0 + math.exp(-z))
    r = mx.responsibilities(m, [0.0])
    np.testing.assert_allclose(r, [sig(8.0), sig(-8.0)], rtol=1e-12)
    d0 = math.exp(0.0)
    d1 = math.exp(-8.0)
    assert r[0] == pytest.approx(d0 / (d0 + d1), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), shift=st.floats(-50, 50))
def test_responsibilities_sum_to_one_and_shift_invariant(seed, shift):
    rng = np.random.default_rng(seed)
    m = random_gaussian_mixture(rng, 2, 3)
    X = rng.normal(0, 5, (10, 2))
    r = mx.responsibilities(m, X)
    assert np.all(r >= 0)
    np.testing.assert_allclose(r.sum(axis=1), 1.0, atol=1e-12)
    # common multiplicative constant on the unnormalized densities
    a = m.component_log_densities(X) + m.log_weights + shift
    a -= a.max(axis=1, keepdims=True)
    r2 = np.exp(a) / np.exp(a).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(r, r2, atol=1e-12)


def test_i_max_tie_goes_to_larger_index(two_modes):
    assert mx.i_max(two_modes, [0.0]) == 1
    assert mx.i_max(two_modes, [-3.0]) == 0
    assert mx.i_max(two_modes, [0.0], subset=[0]) == 0


def test_i_max_brute_force(rng):
    m = random_gaussian_mixture(rng, 2, 3)
    X = rng.normal(0, 3, (200, 2))
    logs = m.component_log_densities(X)
    expected = [max(range(3), key=lambda k, row=row: (row[k], k)) for row in logs]
    np.testing.assert_array_equal(mx.i_max(m, X), expected)


def test_i_max_empty_subset(two_modes):
    with pytest.raises(ValueError):
        mx.i_max(two_modes, [0.0], subset=[])


# ----------------------------------------------------------------------------
# Sampling
# ----------------------------------------------------------------------------


def test_sample_mean_standard_gaussian():
    m = Mixture.gaussian([[0.0, 0.0]], [1.0], [1.0])
    X = mx.sample_ground_truth(m, 100_000, np.random.default_rng(1))
    assert np.all(np.abs(X.mean(axis=0)) <= 4 / math.sqrt(1e5))


def test_sample_component_counts():
    m = Mixture.gaussian([[-6.0], [6.0]], [1.5, 1.5], [2 / 3, 1 / 3])
    n = 90_000
    _, labels = mx.sample_with_labels(m, n, np.random.default_rng(2))
    assert abs(np.sum(labels == 0) - 2 * n / 3) <= 3 * math.sqrt(n * 2 / 9)


def test_sample_empty_and_deterministic(two_modes):
    assert mx.sample_ground_truth(two_modes, 0, np.random.default_rng(0)).shape == (0, 1)
    a = mx.sample_ground_truth(two_modes, 50, np.random.default_rng(5))
    b = mx.sample_ground_truth(two_modes, 50, np.random.default_rng(5))
    assert np.array_equal(a, b)


def _quadratic_custom(sampler=None):
    return CustomComponent(
        potential=lambda X: 0.5 * np.sum(X**2, axis=1) + 0.5 * math.log(2 * math.pi),
        grad=lambda X: X,
        hess=lambda X: np.broadcast_to(np.eye(1), (X.shape[0], 1, 1)),
        mode=np.zeros(1), alpha=1.0, beta=1.0, sampler=sampler,
    )


def test_custom_component_without_sampler_rejected():
    m = Mixture([_quadratic_custom()], [1.0])
    with pytest.raises(ValueError):
        mx.sample_ground_truth(m, 3, np.random.default_rng(0))
    # density and score still work, and agree with the Gaussian formulas
    assert mx.log_density(m, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi))
    assert mx.score(m, [2.0]) == pytest.approx([-2.0])


def test_custom_audit_passes_for_true_declaration():
    rep = audit_custom_component(_quadratic_custom(), np.linspace(-3, 3, 7)[:, None])
    assert rep["alpha_ok"] and rep["beta_ok"]
    assert rep["max_grad_error"] < 1e-6 and rep["max_hess_error"] < 1e-6


def test_custom_audit_flags_wrong_declaration():
    c = _quadratic_custom()
    wrong = CustomComponent(c.potential, c.grad, c.hess, c.mode, alpha=2.0, beta=2.0)
    assert not audit_custom_component(wrong, np.zeros((1, 1)))["alpha_ok"]


# ----------------------------------------------------------------------------
# Smoothness summary
# ----------------------------------------------------------------------------


def test_smoothness_summary_standard():
    d = 4
    s = mx.smoothness_summary(Mixture.gaussian([np.zeros(d)], [1.0], [1.0]))
    assert (s.alpha, s.beta, s.kappa) == (1.0, 1.0, 1.0)
    assert s.D == pytest.approx(5 * math.sqrt(d) * math.log(10))


def test_smoothness_summary_two_variances():
    s = mx.smoothness_summary(Mixture.gaussian([[0.0], [1.0]], [1.0, 2.0], [0.5, 0.5]))
    assert (s.alpha, s.beta, s.kappa) == pytest.approx((0.5, 1.0, 2.0))


def test_smoothness_summary_rescale_flag():
    d = 32
    e1 = np.eye(d)[0]
    m = Mixture.gaussian([-6 * e1, 6 * e1], [1.5, 1.5], [2 / 3, 1 / 3])
    s = mx.smoothness_summary(m)
    assert s.alpha == pytest.approx(2 / 3) and s.beta == pytest.approx(2 / 3)
    assert s.kappa == pytest.approx(1.0)
    assert s.rescale_advised


def test_concentration_tail_per_component():
    from earlylmc.diagnostics import concentration_check

    m = Mixture.gaussian([[0.0, 0.0], [5.0, 5.0]], [1.0, 2.0], [0.5, 0.5])
    rng = np.random.default_rng(3)
    for c in m.components:
        X = c.sample(rng, 100_000)
        t = np.array([0.5, 1.0, 2.0]) * math.sqrt(m.dim / c.alpha)
        assert concentration_check(X, c, t)["passed"]
