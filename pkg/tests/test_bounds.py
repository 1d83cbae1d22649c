import sys
import os
import math
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from models import BoundKind, ExactForm
from utils.bounds import (
    BoundReport,
    component_constant_error,
    constant_delta_error,
    exact_closed_form,
    exact_error_mc,
    exponentiated_l2_error,
    hitting_error,
    holder_bound_mc,
    holder_closed_form,
    holder_exponent,
    holder_minimizer,
    integrate_square,
    kl_lower_closed_form,
    sine_perturbation_error,
)
from utils.dynamics import DoubleWellProblem, brownian_exit_simulate, scalar_ou
from utils.errors import RejectedInputError
from utils.estimators import importance_estimate
from utils.pde import Grid1D, solve_h_field, solve_psi_backward
from utils.sde import StoppingSpec, constant, make_time_grid, minus, plus, simulate_controlled, sine_in_space

ou = scalar_ou(-1.0, 1.0)
grid = make_time_grid(1.0, 100)
ROOT2 = math.sqrt(2.0)


@settings(max_examples=100, deadline=None)
@given(integral=st.floats(min_value=0.0, max_value=20.0))
def test_closed_forms_are_ordered(integral):
    assert kl_lower_closed_form(integral) <= exact_closed_form(integral) <= holder_closed_form(integral)


def test_holder_minimizer_for_second_moment():
    p, q = holder_minimizer(2.0)
    assert p == pytest.approx(1.0 + 1.0 / ROOT2)
    assert q == pytest.approx(1.0 + ROOT2)
    assert holder_exponent(2.0, p) == pytest.approx((1.0 + ROOT2) ** 2, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(n=st.floats(min_value=1.1, max_value=6.0), p=st.floats(min_value=1.01, max_value=10.0))
def test_minimizer_is_optimal(n, p):
    p_star, _ = holder_minimizer(n)
    assert holder_exponent(n, p) >= holder_exponent(n, p_star) * (1 - 1e-12)


def test_holder_exponent_rejects_p_below_one():
    with pytest.raises(RejectedInputError):
        holder_exponent(2.0, 1.0)


def test_component_constant_error():
    assert component_constant_error(0.5, 1, 1.0) == pytest.approx(math.sqrt(math.expm1(0.25)))
    assert component_constant_error(0.0, 3, 1.0) == 0.0
    assert component_constant_error(0.1, 4, 2.0) == pytest.approx(math.sqrt(math.expm1(0.08)))


def test_constant_delta_interval():
    exact = constant_delta_error(0.3, T=2.0)
    assert exact.lower == exact.upper == exact.exact
    assert exact.exact == pytest.approx(math.sqrt(math.expm1(0.18)))
    interval = constant_delta_error(0.2, lambda t: 0.2 + t, T=1.0)
    assert interval.lower < interval.upper
    assert interval.exact is None
    with pytest.raises(RejectedInputError):
        constant_delta_error(0.5, 0.2, T=1.0)


def test_windowed_envelope_with_breakpoint():
    value = constant_delta_error(lambda t: 0.4 if t < 0.2 else 0.0, T=1.0, breakpoints=[0.2]).lower
    assert value == pytest.approx(math.sqrt(math.expm1(0.16 * 0.2)), rel=1e-9)


def test_sine_formula_matches_quadrature():
    eps, alpha, T = 0.5, 50.0, 1.0
    integral = integrate_square(lambda t: eps * math.sin(alpha * t), T)
    assert sine_perturbation_error(eps, alpha, T) == pytest.approx(math.sqrt(math.expm1(integral)), rel=1e-9)
    with pytest.raises(RejectedInputError):
        sine_perturbation_error(eps, 0.0, T)


def test_exact_mc_under_u_plus_2delta_is_exact_for_constant_delta():
    eps = 0.4
    u = plus(ou.u_star(), constant(eps))
    report = exact_error_mc(ou.model, u, constant(-eps), ExactForm.UNDER_U_PLUS_2DELTA, grid, 500, seed=1)
    assert report.kind == BoundKind.EXACT_MC_FORM2
    assert report.value == pytest.approx(component_constant_error(eps, 1, 1.0), rel=1e-9)
    assert report.flags == []


def test_exact_mc_under_u_tracks_closed_form():
    eps = 0.3
    u = plus(ou.u_star(), constant(eps))
    report = exact_error_mc(ou.model, u, constant(-eps), ExactForm.UNDER_U, grid, 20000, seed=2, n_resamples=50)
    exact = component_constant_error(eps, 1, 1.0)
    assert report.kind == BoundKind.EXACT_MC_FORM1
    assert abs(report.value - exact) < 5 * report.stderr + 0.02


def test_sampled_relative_error_matches_exact_formula():
    eps = 0.3
    u = plus(ou.u_star(), constant(eps))
    batch = simulate_controlled(ou.model, u, None, ou.g, make_time_grid(1.0, 500), StoppingSpec.fixed_horizon(),
                                50000, seed=3)
    est = importance_estimate(batch, n_resamples=50)
    assert est.rel_err_hat == pytest.approx(component_constant_error(eps, 1, 1.0), rel=0.1)


def test_holder_mc_matches_closed_form_for_constant_delta():
    eps = 0.3
    u = plus(ou.u_star(), constant(eps))
    report = holder_bound_mc(ou.model, u, constant(-eps), grid, 200, seed=4)
    assert report.value == pytest.approx(holder_closed_form(eps ** 2), rel=1e-9)
    assert report.value >= component_constant_error(eps, 1, 1.0)


def test_holder_mc_rejects_non_conjugate_exponents():
    with pytest.raises(RejectedInputError):
        holder_bound_mc(ou.model, ou.u_star(), constant(0.1), grid, 10, seed=0, p=2.0, q=3.0)


def test_bound_report_validation():
    with pytest.raises(RejectedInputError):
        BoundReport(BoundKind.EXACT_CLOSED_FORM, -0.1)
    with pytest.raises(RejectedInputError):
        BoundReport(BoundKind.EXACT_MC_FORM1, 0.3)
    assert BoundReport(BoundKind.LOWER_KL, 0.2).stderr is None


def test_exponentiated_l2_error_for_constant_field():
    batch = simulate_controlled(ou.model, ou.u_star(), None, ou.g, grid, StoppingSpec.fixed_horizon(), 20, seed=0,
                                aux_field=constant(0.5))
    assert exponentiated_l2_error(batch) == pytest.approx(math.exp(0.25), rel=1e-12)


def test_hitting_formulas():
    stopping = StoppingSpec.first_exit(-1.0, 1.0, 100.0)
    eps = 0.5
    reflected_batch = brownian_exit_simulate(eps, stopping, dt=1e-3, k=2000, seed=1, wrapper="2u_star_minus_u")
    plain = brownian_exit_simulate(0.0, stopping, dt=1e-3, k=2000, seed=2, wrapper="zero")
    reports = hitting_error(eps, reflected_batch, plain, n_resamples=50)
    assert reports.jensen_lower.value <= reports.exact.value
    assert reports.exact.value > 0
    assert reports.naive_wrong.stderr > 0


def test_optimal_exit_control_is_nearly_zero_variance():
    stopping = StoppingSpec.first_exit(-1.0, 1.0, 100.0)
    batch = brownian_exit_simulate(0.0, stopping, dt=1e-4, k=1000, seed=5, wrapper="u_star")
    est = importance_estimate(batch, bootstrap=False)
    assert est.rel_err_hat < 0.05
    assert est.z_hat == pytest.approx(1.0 / math.cosh(1.0), rel=0.02)


def test_sine_formula_value():
    assert sine_perturbation_error(1.0, 50.0, 1.0) == pytest.approx(0.8081, abs=5e-4)


def test_holder_bound_on_a_p_grid():
    eps = 0.3
    u = plus(ou.u_star(), constant(eps))
    exact = component_constant_error(eps, 1, 1.0)
    for p in (1.2, 1.5, holder_minimizer(2.0)[0], 2.5, 4.0):
        report = holder_bound_mc(ou.model, u, constant(-eps), grid, 100, seed=4, p=p)
        # deterministic integral I: E[exp(c I)]^(1/q) = exp((2p - 1) I)
        assert report.value == pytest.approx(math.sqrt(math.expm1((2 * p - 1) * eps ** 2)), rel=1e-9)
        assert report.value >= exact
    with pytest.raises(RejectedInputError):
        holder_bound_mc(ou.model, u, constant(-eps), grid, 10, seed=0, p=1.0)


@pytest.fixture(scope="module")
def sine_space_control():
    """Double well with u = u* + 0.5 sin(2x), so delta depends on x"""
    problem = DoubleWellProblem()
    pde_grid = Grid1D(-3.0, 3.0, 601, 1000, 1.0)
    u_star = solve_psi_backward(problem.model, None, problem.g, pde_grid).derived_control
    u = plus(u_star, sine_in_space(0.5, 2.0))
    return problem, u, minus(u_star, u), pde_grid


def test_exact_mc_forms_agree_for_state_dependent_delta(sine_space_control):
    problem, u, delta, _ = sine_space_control
    steps = make_time_grid(1.0, 200)
    form1 = exact_error_mc(problem.model, u, delta, ExactForm.UNDER_U, steps, 20000, seed=12, n_resamples=50)
    form2 = exact_error_mc(problem.model, u, delta, ExactForm.UNDER_U_PLUS_2DELTA, steps, 20000, seed=13,
                           n_resamples=50)
    assert form2.value > 0.1
    assert abs(form1.value - form2.value) < 4 * math.hypot(form1.stderr, form2.stderr) + 0.02


def test_h_field_matches_sampled_exact_error(sine_space_control):
    problem, u, delta, pde_grid = sine_space_control
    form2 = exact_error_mc(problem.model, u, delta, ExactForm.UNDER_U_PLUS_2DELTA, make_time_grid(1.0, 500),
                           20000, seed=14, n_resamples=50)
    h = solve_h_field(problem.model, u, delta, pde_grid)
    assert h.relative_error_at(-1.0) == pytest.approx(form2.value, rel=0.15)


def test_holder_bound_dominates_state_dependent_exact_error(sine_space_control):
    problem, u, delta, pde_grid = sine_space_control
    exact = solve_h_field(problem.model, u, delta, pde_grid).relative_error_at(-1.0)
    for p in (1.3, holder_minimizer(2.0)[0], 3.0):
        report = holder_bound_mc(problem.model, u, delta, make_time_grid(1.0, 200), 5000, seed=15, p=p,
                                 n_resamples=20)
        assert report.value >= exact


def test_naive_hitting_formula_is_separated_at_large_eps():
    stopping = StoppingSpec.first_exit(-1.0, 1.0, 100.0)
    eps = 0.75
    reflected_batch = brownian_exit_simulate(eps, stopping, dt=1e-3, k=4000, seed=21, wrapper="2u_star_minus_u")
    plain = brownian_exit_simulate(0.0, stopping, dt=1e-3, k=4000, seed=22, wrapper="zero")
    reports = hitting_error(eps, reflected_batch, plain, n_resamples=100)
    assert reports.jensen_lower.value <= reports.exact.value
    band = 4 * math.hypot(reports.exact.stderr, reports.naive_wrong.stderr)
    assert abs(reports.naive_wrong.value - reports.exact.value) > band


@pytest.mark.slow
def test_hitting_exact_formula_tracks_direct_sampling():
    stopping = StoppingSpec.first_exit(-1.0, 1.0, 100.0)
    eps = 0.5
    direct = brownian_exit_simulate(eps, stopping, dt=1e-3, k=20000, seed=31, wrapper="u")
    reflected_batch = brownian_exit_simulate(eps, stopping, dt=1e-3, k=20000, seed=32, wrapper="2u_star_minus_u")
    plain = brownian_exit_simulate(0.0, stopping, dt=1e-3, k=2000, seed=33, wrapper="zero")
    reports = hitting_error(eps, reflected_batch, plain, n_resamples=50)
    est = importance_estimate(direct, n_resamples=50)
    assert reports.exact.value == pytest.approx(est.rel_err_hat, rel=0.15)
