import sys
import os
import math
import numpy as np
import pytest
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from utils.dynamics import brownian_exit_simulate, random_ou, scalar_ou
from utils.errors import IncompleteBatchError, MissingAccumulatorError, RejectedInputError
from utils.estimators import (
    bootstrap_stderr,
    chi2_hat,
    estimate_log_weights,
    importance_estimate,
    path_kl_estimate,
    relative_error,
)
from utils.sde import StoppingSpec, constant, make_time_grid, plus, simulate_controlled, zero

fixed = StoppingSpec.fixed_horizon()


def test_constant_weights_have_no_error():
    est = estimate_log_weights(np.full(100, -2.0), bootstrap=False)
    assert est.rel_err_hat == 0.0
    assert est.ess == pytest.approx(100.0)
    assert est.z_hat == pytest.approx(math.exp(-2.0))
    assert est.flags == []


def test_statistics_are_shift_invariant():
    rng = np.random.default_rng(0)
    log_w = rng.normal(size=500)
    a = estimate_log_weights(log_w, bootstrap=False)
    b = estimate_log_weights(log_w + 50.0, bootstrap=False)
    assert b.rel_err_hat == pytest.approx(a.rel_err_hat, rel=1e-12)
    assert b.ess == pytest.approx(a.ess, rel=1e-12)
    assert b.z_hat == pytest.approx(a.z_hat * math.exp(50.0), rel=1e-12)


def test_very_negative_log_weights_do_not_underflow():
    est = estimate_log_weights(np.array([-2000.0, -2001.0, -2000.5]), bootstrap=False)
    assert est.rel_err_hat > 0
    assert np.isfinite(est.rel_err_hat)


def test_low_ess_flagged():
    log_w = np.zeros(1000)
    log_w[0] = 50.0
    est = estimate_log_weights(log_w, bootstrap=False)
    assert est.ess < 100
    assert "low_ess" in est.flags


def test_bad_log_weights_rejected():
    with pytest.raises(RejectedInputError):
        estimate_log_weights(np.array([]))
    with pytest.raises(RejectedInputError):
        estimate_log_weights(np.array([0.0, np.nan]))
    with pytest.raises(RejectedInputError):
        estimate_log_weights(np.array([-np.inf, -np.inf]))


def test_bootstrap_is_reproducible():
    w = np.exp(np.random.default_rng(1).normal(size=300))
    a = bootstrap_stderr(relative_error, w, 50, seed=9)
    b = bootstrap_stderr(relative_error, w, 50, seed=9)
    assert a == b
    assert a > 0


def test_chi2_hat_is_squared_relative_error():
    ou = scalar_ou(-1.0, 1.0)
    batch = simulate_controlled(ou.model, constant(0.2), None, ou.g, make_time_grid(1.0, 50), fixed, 2000, seed=4)
    est = importance_estimate(batch, bootstrap=False)
    assert chi2_hat(batch) == est.rel_err_hat ** 2


def test_chi2_hat_with_reference():
    ou = scalar_ou(-1.0, 1.0)
    batch = simulate_controlled(ou.model, zero(1), None, ou.g, make_time_grid(1.0, 50), fixed, 5000, seed=4)
    z_ref = ou.z_exact(50)
    value = chi2_hat(batch, z_reference=z_ref)
    assert value == pytest.approx(chi2_hat(batch), rel=0.1)
    with pytest.raises(RejectedInputError):
        chi2_hat(batch, z_reference=0.0)


def test_optimal_ou_control_is_nearly_zero_variance():
    ou = random_ou(1, seed=42)
    n_steps = 1000
    batch = simulate_controlled(ou.model, ou.u_star(), None, ou.g, make_time_grid(1.0, n_steps), fixed,
                                5000, seed=1)
    est = importance_estimate(batch, bootstrap=False)
    assert est.rel_err_hat < 0.05
    assert abs(est.z_hat - ou.z_exact(n_steps)) <= 4 * est.stderr_z + 1e-12
    assert est.z_hat == pytest.approx(ou.z_exact(), rel=0.01)


def test_incomplete_batch_cannot_be_estimated():
    batch = brownian_exit_simulate(0.5, StoppingSpec.first_exit(-1.0, 1.0, 0.01), dt=1e-3, k=50, seed=0)
    with pytest.raises(IncompleteBatchError):
        importance_estimate(batch)


def test_path_kl_needs_auxiliary_integrals():
    ou = scalar_ou(-1.0, 1.0)
    batch = simulate_controlled(ou.model, zero(1), None, ou.g, make_time_grid(1.0, 20), fixed, 10, seed=0)
    assert path_kl_estimate(zero(1), batch) == 0.0
    with pytest.raises(MissingAccumulatorError):
        path_kl_estimate(constant(0.1), batch)


def test_path_kl_for_constant_delta():
    ou = scalar_ou(-1.0, 1.0)
    u_star = ou.u_star()
    delta = constant(0.3)
    batch = simulate_controlled(ou.model, u_star, None, ou.g, make_time_grid(1.0, 20), fixed, 10, seed=0,
                                aux_field=delta)
    assert path_kl_estimate(delta, batch) == pytest.approx(0.5 * 0.09, rel=1e-12)


def test_path_kl_rejects_foreign_accumulator():
    ou = scalar_ou(-1.0, 1.0)
    batch = simulate_controlled(ou.model, plus(ou.u_star(), constant(0.1)), None, ou.g, make_time_grid(1.0, 20),
                                fixed, 10, seed=0, aux_field=constant(0.3))
    with pytest.raises(RejectedInputError):
        path_kl_estimate(constant(0.4), batch)


@pytest.mark.slow
def test_optimal_ou_control_in_two_dimensions():
    ou = random_ou(2, seed=7)
    n_steps = 1000
    batch = simulate_controlled(ou.model, ou.u_star(), None, ou.g, make_time_grid(1.0, n_steps), fixed,
                                100000, seed=2)
    est = importance_estimate(batch, bootstrap=False)
    assert est.rel_err_hat < 0.05
    assert abs(est.z_hat - ou.z_exact(n_steps)) <= 4 * est.stderr_z + 1e-12
