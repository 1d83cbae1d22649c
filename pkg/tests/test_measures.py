import sys
import os
import math
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.integrate import quad
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from utils.errors import RejectedInputError
from utils.estimators import estimate_log_weights
from utils.measures import (
    GaussianMeasure,
    GriddedDensity1D,
    ParetoDensity,
    density_ratio_extremes,
    gaussian_chi2,
    gaussian_is_sample,
    gaussian_kl,
    jensen_functional,
    kl_lower_bound,
    kl_marginal_chain,
    lognormal_error,
    optimal_gaussian_proposal,
    pareto_pair,
    perturbed_gaussian_error,
    perturbed_gaussian_proposal,
    product_dimension_blowup,
    refined_bounds,
)

# Correlated 2-D reference measure
p2 = GaussianMeasure(np.array([0.5, -1.0]), np.array([[1.0, 0.3], [0.3, 2.0]]))


def test_kl_of_identical_measures_is_zero():
    assert gaussian_kl(p2, p2) == 0.0


def test_kl_one_dimensional_closed_form():
    p = GaussianMeasure([0.0], [[1.0]])
    q = GaussianMeasure([1.0], [[4.0]])
    expected = math.log(2.0) + (1.0 + 1.0) / (2 * 4.0) - 0.5
    assert gaussian_kl(p, q) == pytest.approx(expected, rel=1e-12)


def test_log_pdf_matches_scipy():
    x = np.array([[0.0, 0.0], [1.0, -2.0]])
    expected = stats.multivariate_normal(p2.mean, p2.covariance).logpdf(x)
    assert np.allclose(p2.log_pdf(x), expected, rtol=1e-12)


def test_chi2_shifted_mean():
    p = GaussianMeasure([0.3], [[2.0]])
    q = GaussianMeasure([0.0], [[2.0]])
    assert gaussian_chi2(p, q) == pytest.approx(math.expm1(0.09 / 2.0), rel=1e-10)


def test_chi2_infinite_for_narrow_reference():
    p = GaussianMeasure([0.0], [[1.0]])
    q = GaussianMeasure([0.0], [[0.4]])
    assert gaussian_chi2(p, q) == float("inf")


def test_perturbed_error_is_sqrt_chi2_of_optimal_against_proposal():
    alpha = np.array([1.0, 0.5])
    eps = np.array([0.2, -0.1])
    opt = optimal_gaussian_proposal(p2, alpha)
    pert = perturbed_gaussian_proposal(p2, alpha, eps)
    r = perturbed_gaussian_error(p2.covariance, eps)
    assert r ** 2 == pytest.approx(gaussian_chi2(opt, pert), rel=1e-9)
    assert kl_lower_bound(gaussian_kl(opt, pert)) <= r


def test_lognormal_error_drops_mean():
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    gamma = np.array([0.5, 0.5])
    assert lognormal_error(gamma, cov) == pytest.approx(math.sqrt(math.expm1(0.75)), rel=1e-12)


def test_sampled_gaussian_relative_error_matches_closed_form():
    p = GaussianMeasure(np.zeros(2), np.eye(2))
    alpha = np.ones(2)
    eps = np.array([0.3, 0.3])
    log_w = gaussian_is_sample(p, alpha, eps, 100000, seed=11)
    est = estimate_log_weights(log_w, bootstrap=False)
    exact = perturbed_gaussian_error(np.eye(2), eps)
    assert est.rel_err_hat == pytest.approx(exact, rel=0.05)
    # Z = exp(alpha' Sigma alpha / 2)
    assert est.z_hat == pytest.approx(math.e, rel=0.01)


def test_non_spd_covariance_rejected():
    with pytest.raises(RejectedInputError):
        GaussianMeasure([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(RejectedInputError):
        GaussianMeasure([0.0, 0.0], [[1.0, 0.1], [0.0, 1.0]])


def test_refined_bounds_with_unbounded_ratio():
    bounds = refined_bounds(0.0, float("inf"), 0.3, 0.2)
    assert bounds.upper == float("inf")
    assert bounds.lower == pytest.approx(math.sqrt(math.expm1(0.2)))


def test_refined_bounds_rejects_inverted_extremes():
    with pytest.raises(RejectedInputError):
        refined_bounds(1.5, 1.2, 0.1, 0.1)


def test_pareto_ratio_diverges():
    nodes = np.logspace(0, 4, 400)
    p, q = pareto_pair(2.0, nodes)
    extremes = density_ratio_extremes(p, q)
    assert extremes.diverging
    assert extremes.M_hat == pytest.approx(nodes[-1] ** 2 / 2.0, rel=1e-9)


def test_equal_densities_do_not_diverge():
    nodes = np.linspace(-3, 3, 101)
    values = np.exp(-nodes ** 2 / 2)
    extremes = density_ratio_extremes(GriddedDensity1D(nodes, values), GriddedDensity1D(nodes, values))
    assert extremes.m_hat == 1.0
    assert extremes.M_hat == 1.0
    assert not extremes.diverging


def test_ratio_rejects_vanishing_reference():
    nodes = np.linspace(0, 1, 5)
    p = GriddedDensity1D(nodes, np.ones(5))
    q = GriddedDensity1D(nodes, np.array([1.0, 1.0, 0.0, 1.0, 1.0]))
    with pytest.raises(RejectedInputError):
        density_ratio_extremes(p, q)


def test_jensen_functional_nonnegative_for_convex_f():
    nodes = np.linspace(-5, 5, 2001)
    density = GriddedDensity1D(nodes, stats.norm.pdf(nodes)).normalized()
    gap = jensen_functional(np.exp, density, lambda x: x)
    assert gap > 0
    assert gap == pytest.approx(math.exp(0.5) - 1.0, rel=1e-3)


def test_jensen_functional_requires_normalized_density():
    nodes = np.linspace(0, 1, 11)
    with pytest.raises(RejectedInputError):
        jensen_functional(np.exp, GriddedDensity1D(nodes, 2.0 * np.ones(11)), lambda x: x)


def test_kl_marginal_chain_nondecreasing():
    p = GaussianMeasure(np.zeros(4), np.eye(4))
    q = GaussianMeasure(np.full(4, 0.2), np.diag([1.0, 2.0, 0.5, 1.5]))
    chain = kl_marginal_chain(p, q)
    assert chain.shape == (4,)
    assert np.all(np.diff(chain) >= -1e-12)


def test_product_blowup():
    assert product_dimension_blowup(1.1, 100) == pytest.approx(117.387, abs=1e-3)
    assert product_dimension_blowup(1.0 + 1e-12, 10) < 1e-5
    assert product_dimension_blowup(2.0, 1) == pytest.approx(1.0)
    assert product_dimension_blowup(1.5, 3) == pytest.approx(math.sqrt(1.5 ** 3 - 1.0))
    with pytest.raises(RejectedInputError):
        product_dimension_blowup(0.9, 2)
    with pytest.raises(RejectedInputError):
        product_dimension_blowup(1.0, 10)


@settings(max_examples=50, deadline=None)
@given(eps=st.floats(min_value=-2.0, max_value=2.0), var=st.floats(min_value=0.1, max_value=4.0))
def test_kl_lower_bound_never_exceeds_exact(eps, var):
    p = GaussianMeasure([0.0], [[var]])
    opt = optimal_gaussian_proposal(p, [1.0])
    pert = perturbed_gaussian_proposal(p, [1.0], [eps])
    assert kl_lower_bound(gaussian_kl(opt, pert)) <= perturbed_gaussian_error(p.covariance, [eps]) * (1 + 1e-12) + 1e-12


def test_kl_matches_quadrature_on_random_pairs():
    rng = np.random.default_rng(20)
    for _ in range(20):
        m_p, m_q = rng.uniform(-1.0, 1.0, 2)
        s_p, s_q = np.sqrt(rng.uniform(0.5, 2.0, 2))
        p = GaussianMeasure([m_p], [[s_p ** 2]])
        q = GaussianMeasure([m_q], [[s_q ** 2]])
        integrand = lambda x: stats.norm.pdf(x, m_p, s_p) * (stats.norm.logpdf(x, m_p, s_p) - stats.norm.logpdf(x, m_q, s_q))
        oracle, _ = quad(integrand, m_p - 40 * s_p, m_p + 40 * s_p, points=[m_p], limit=200,
                         epsabs=1e-14, epsrel=1e-10)
        assert gaussian_kl(p, q) == pytest.approx(oracle, rel=1e-6)


def random_spd(rng, d):
    a = rng.normal(size=(d, d))
    return a @ a.T + 0.1 * np.eye(d)


def test_kl_marginal_chain_nondecreasing_on_random_pairs():
    rng = np.random.default_rng(21)
    for _ in range(100):
        d = int(rng.integers(1, 9))
        p = GaussianMeasure(rng.normal(size=d), random_spd(rng, d))
        q = GaussianMeasure(rng.normal(size=d), random_spd(rng, d))
        chain = kl_marginal_chain(p, q)
        assert chain.shape == (d,)
        assert np.all(np.diff(chain) >= -1e-9 * max(1.0, chain[-1]))
        assert chain[-1] == pytest.approx(gaussian_kl(p, q), rel=1e-12)


def test_pareto_ratio_supremum_for_shape_one_and_a_half():
    nodes = np.logspace(0, 4, 400)
    extremes = density_ratio_extremes(*pareto_pair(1.5, nodes))
    assert extremes.M_hat == pytest.approx(1e6 / 2.0, rel=1e-9)
    assert extremes.m_hat == pytest.approx(0.5, rel=1e-12)
    assert extremes.diverging


def test_jensen_functional_worked_examples():
    nodes = np.linspace(0.0, 1.0, 2001)
    uniform = GriddedDensity1D(nodes, np.ones_like(nodes))
    assert abs(jensen_functional(lambda y: 3.0 * y - 1.0, uniform, lambda x: x ** 2)) < 1e-10
    # trapezoid error of E[x^2] on this grid is 1/(6 * 2000^2)
    assert jensen_functional(np.square, uniform, lambda x: x) == pytest.approx(1.0 / 12.0, abs=1e-7)


def test_jensen_functional_grows_for_truncated_pareto():
    gaps = []
    for upper in (2.0, 4.0, 6.0):
        nodes = np.logspace(0.0, upper, 20001)
        density = ParetoDensity(1.5).on_nodes(nodes).normalized()
        gaps.append(jensen_functional(np.square, density, lambda x: x))
    # variance of Pareto(1.5) cut at X grows like 3 sqrt(X)
    assert gaps[1] == pytest.approx(288.2, rel=1e-3)
    assert gaps[0] < gaps[1] < gaps[2]
    assert gaps[2] > 9 * gaps[1]
