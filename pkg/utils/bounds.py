"""
Path-space relative-error formulas and bounds.

Closed forms for x-independent suboptimality delta = u* - u, Monte Carlo evaluation of
the exact formula in both of its forms, the Hoelder-type upper bound and the
stopping-time formulas of the exit problem.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.integrate import quad
from scipy.special import logsumexp

from config import BOOTSTRAP_RESAMPLES, ESS_WARNING_THRESHOLD
from models import BoundKind, ExactForm
from utils.errors import MissingAccumulatorError, RejectedInputError
from utils.estimators import bootstrap_stderr, require_aux
from utils.sde import (
    ControlField,
    PathBatch,
    SdeModel,
    StoppingSpec,
    TimeGrid,
    plus,
    scaled,
    simulate_controlled,
)

logger = logging.getLogger(__name__)

ROOT2 = math.sqrt(2.0)
HOLDER_COEFFICIENT = (1.0 + ROOT2) ** 2
HOLDER_ROOT = 1.0 + ROOT2

Envelope = Union[float, Callable[[float], Union[float, np.ndarray]]]


@dataclass
class BoundReport:
    kind: BoundKind
    value: float
    stderr: Optional[float] = None
    inputs_digest: str = ""
    flags: List[str] = field(default_factory=list)

    def __post_init__(self):
        if np.isnan(self.value) or self.value < 0:
            raise RejectedInputError(f"{self.kind.value} value must be nonnegative, got {self.value}")
        if self.kind.is_monte_carlo and self.stderr is None:
            raise RejectedInputError(f"{self.kind.value} is a Monte Carlo quantity and needs a stderr")


class ErrorInterval(NamedTuple):
    lower: float
    upper: float

    @property
    def exact(self) -> Optional[float]:
        return self.lower if self.lower == self.upper else None


class HittingReports(NamedTuple):
    exact: BoundReport
    jensen_lower: BoundReport
    naive_wrong: BoundReport


def _as_callable(h: Envelope) -> Callable[[float], float]:
    if callable(h):
        return lambda t: float(np.sum(np.square(np.asarray(h(t), dtype=float))))
    value = float(np.sum(np.square(np.asarray(h, dtype=float))))
    return lambda t: value


def integrate_square(h: Envelope, T: float, breakpoints: Sequence[float] = ()) -> float:
    """int_0^T |h(t)|^2 dt, summing over components for vector-valued h"""
    if not callable(h):
        return _as_callable(h)(0.0) * T
    points = [p for p in breakpoints if 0.0 < p < T]
    value, _ = quad(_as_callable(h), 0.0, T, points=points or None, limit=500,
                    epsabs=1e-14, epsrel=1e-13)
    return float(value)


def constant_delta_error(h_lower: Envelope, h_upper: Optional[Envelope] = None, *, T: float,
                         breakpoints: Sequence[float] = ()) -> ErrorInterval:
    """
    Relative-error interval from time envelopes h1(t) <= |delta(x, t)| <= h2(t).

    Args:
        h_lower: lower envelope, scalar or per-component, constant or a function of t
        h_upper: upper envelope; omitted when delta does not depend on x, in which case
            the interval collapses to the exact value
        T: horizon
        breakpoints: discontinuities of the envelopes inside (0, T)

    Returns:
        ErrorInterval: (sqrt(exp(int h1^2) - 1), sqrt(exp(int h2^2) - 1))
    """
    if not T > 0:
        raise RejectedInputError(f"horizon must be positive, got {T}")
    lower_sq = integrate_square(h_lower, T, breakpoints)
    if h_upper is None:
        value = float(np.sqrt(np.expm1(lower_sq)))
        return ErrorInterval(value, value)

    lo, hi = _as_callable(h_lower), _as_callable(h_upper)
    checkpoints = np.unique(np.concatenate([np.linspace(0.0, T, 1001), [p for p in breakpoints if 0 <= p <= T]]))
    for t in checkpoints:
        if lo(t) > hi(t) * (1.0 + 1e-12):
            raise RejectedInputError(f"lower envelope exceeds upper envelope at t = {t:g}")
    upper_sq = integrate_square(h_upper, T, breakpoints)
    return ErrorInterval(float(np.sqrt(np.expm1(lower_sq))), float(np.sqrt(np.expm1(upper_sq))))


def component_constant_error(eps_tilde: float, d: int, T: float) -> float:
    """sqrt(exp(d eps^2 T) - 1) for delta = (eps, ..., eps)"""
    return float(np.sqrt(np.expm1(d * eps_tilde * eps_tilde * T)))


def sine_perturbation_error(eps: float, alpha: float, T: float) -> float:
    """delta(t) = eps sin(alpha t): sqrt(exp(eps^2 (T/2 - sin(2 alpha T)/(4 alpha))) - 1)"""
    if alpha == 0:
        raise RejectedInputError("alpha = 0 is the zero perturbation; use constant_delta_error")
    exponent = eps * eps * (T / 2.0 - math.sin(2.0 * alpha * T) / (4.0 * alpha))
    return float(np.sqrt(np.expm1(exponent)))


def exact_closed_form(integral_sq: float) -> float:
    return float(np.sqrt(np.expm1(integral_sq)))


def kl_lower_closed_form(integral_sq: float) -> float:
    """KL lower bound sqrt(exp(0.5 int |delta|^2) - 1) for x-independent delta"""
    return float(np.sqrt(np.expm1(0.5 * integral_sq)))


def holder_closed_form(integral_sq: float) -> float:
    """Hoelder upper bound sqrt(exp((1 + sqrt 2) int |delta|^2) - 1) for x-independent delta"""
    return float(np.sqrt(np.expm1(HOLDER_ROOT * integral_sq)))


def holder_exponent(n: float, p: float) -> float:
    """Coefficient n q (n p - 1) / 2 of int |delta|^2 inside the Hoelder moment bound"""
    if not p > 1:
        raise RejectedInputError(f"Hoelder exponent p must exceed 1, got {p}")
    q = p / (p - 1.0)
    return n * q * (n * p - 1.0) / 2.0


def holder_minimizer(n: float = 2.0):
    """(p*, q*) minimising holder_exponent for the n-th moment"""
    if not n > 1:
        raise RejectedInputError(f"moment order must exceed 1, got {n}")
    p = 1.0 + math.sqrt(1.0 - 1.0 / n)
    return p, p / (p - 1.0)


def _digest(delta: ControlField, model: SdeModel, grid: TimeGrid, k: int, seed: int) -> str:
    return f"delta={delta.describe()};d={model.dim};T={grid.T:g};n_steps={grid.n_steps};k={k};seed={seed}"


def _sqrt_excess(log_values: np.ndarray) -> float:
    """sqrt(max(mean(exp(log_values)) - 1, 0))"""
    log_mean = logsumexp(log_values) - math.log(log_values.shape[0])
    return float(np.sqrt(max(math.expm1(log_mean) if log_mean < 700 else math.inf, 0.0)))


def _log_ess(log_values: np.ndarray) -> float:
    w = np.exp(log_values - np.max(log_values))
    return float(np.sum(w) ** 2 / np.sum(w * w))


def exact_error_mc(model: SdeModel, u: ControlField, delta: ControlField, form: ExactForm,
                   grid: TimeGrid, k: int, seed: int, *, stopping: Optional[StoppingSpec] = None,
                   workers: Optional[int] = None,
                   n_resamples: int = BOOTSTRAP_RESAMPLES) -> BoundReport:
    """
    Monte Carlo evaluation of the exact relative error r(u) for delta = u* - u.

    ``under_u`` samples X^u and averages exp(-int |delta|^2 ds + 2 int delta.dW);
    ``under_u_plus_2delta`` samples X^{u + 2 delta} and averages exp(int |delta|^2 ds).
    A sample mean below 1 is clamped to r = 0 and flagged.
    """
    form = ExactForm(form)
    stopping = stopping or StoppingSpec.fixed_horizon()
    kind = BoundKind.EXACT_MC_FORM1 if form == ExactForm.UNDER_U else BoundKind.EXACT_MC_FORM2
    if form == ExactForm.UNDER_U:
        sampler = u
    else:
        sampler = plus(u, scaled(delta, 2.0))
    batch = simulate_controlled(model, sampler, None, None, grid, stopping, k, seed,
                                aux_field=delta, workers=workers)
    batch.require_complete()
    if form == ExactForm.UNDER_U:
        log_values = -batch.aux_sq + 2.0 * batch.aux_dw
    else:
        log_values = batch.aux_sq

    flags = []
    log_mean = logsumexp(log_values) - math.log(k)
    if log_mean < 0:
        flags.append("clamped")
        logger.warning("%s: sample mean %.6g below 1, relative error clamped to 0", kind.value, math.exp(log_mean))
    if _log_ess(log_values) < ESS_WARNING_THRESHOLD:
        flags.append("low_ess")
        logger.warning("%s: effective sample size below %d", kind.value, ESS_WARNING_THRESHOLD)

    value = _sqrt_excess(log_values)
    stderr = bootstrap_stderr(_sqrt_excess, log_values, n_resamples, seed)
    return BoundReport(kind, value, stderr, _digest(delta, model, grid, k, seed), flags)


def holder_bound_mc(model: SdeModel, u: ControlField, delta: ControlField, grid: TimeGrid,
                    k: int, seed: int, n: float = 2.0, p: Optional[float] = None,
                    q: Optional[float] = None, *, workers: Optional[int] = None,
                    n_resamples: int = BOOTSTRAP_RESAMPLES) -> BoundReport:
    """
    Hoelder upper bound on the relative error, sampled under u.

    With the default (n, p, q) = (2, p*, q*) the value is
    sqrt(E[exp((1 + sqrt 2)^2 int |delta|^2 ds)]^(1/(1 + sqrt 2)) - 1). Other admissible
    (p, q) give the general moment bound E[exp(holder_exponent(n, p) int |delta|^2)]^(1/q);
    for n != 2 the reported value is sqrt of that n-th moment bound minus one.
    """
    if p is None and q is None:
        p, q = holder_minimizer(n)
    elif q is None:
        if not p > 1:
            raise RejectedInputError(f"p must exceed 1, got {p}")
        q = p / (p - 1.0)
    elif p is None:
        if not q > 1:
            raise RejectedInputError(f"q must exceed 1, got {q}")
        p = q / (q - 1.0)
    if not (p > 1 and q > 1):
        raise RejectedInputError(f"Hoelder exponents must exceed 1, got p={p}, q={q}")
    if abs(1.0 / p + 1.0 / q - 1.0) > 1e-12:
        raise RejectedInputError(f"p={p} and q={q} are not conjugate")
    p_star, _ = holder_minimizer(n)
    if abs(p - p_star) > 1e-12:
        logger.info("Hoelder bound evaluated off the minimiser: p=%g, p*=%g", p, p_star)

    coefficient = holder_exponent(n, p)
    batch = simulate_controlled(model, u, None, None, grid, StoppingSpec.fixed_horizon(), k, seed,
                                aux_field=delta, workers=workers)
    log_values = coefficient * batch.aux_sq

    def statistic(values: np.ndarray) -> float:
        log_moment = (logsumexp(values) - math.log(values.shape[0])) / q
        return float(np.sqrt(max(math.expm1(log_moment) if log_moment < 700 else math.inf, 0.0)))

    flags = []
    if _log_ess(log_values) < ESS_WARNING_THRESHOLD:
        flags.append("low_ess")
    value = statistic(log_values)
    stderr = bootstrap_stderr(statistic, log_values, n_resamples, seed)
    return BoundReport(BoundKind.UPPER_HOLDER, value, stderr, _digest(delta, model, grid, k, seed), flags)


def _exit_times(batch: PathBatch, what: str) -> np.ndarray:
    if batch.exit_time is None:
        raise MissingAccumulatorError(f"{what} batch carries no exit times")
    batch.require_complete()
    return batch.exit_time


def hitting_error(eps: float, batch_2ustar_minus_u: PathBatch, batch_plain: PathBatch, *,
                  n_resamples: int = BOOTSTRAP_RESAMPLES) -> HittingReports:
    """
    Relative error of u = u* + eps on the exit problem, three ways.

    exact uses the exit times of X^{2u* - u}; jensen_lower moves the expectation inside
    the exponential and is never larger than exact; naive_wrong plugs in the exit
    times of the uncontrolled process, which is not a valid formula.
    """
    tau_reflected = _exit_times(batch_2ustar_minus_u, "reflected-control")
    tau_plain = _exit_times(batch_plain, "uncontrolled")
    e2 = eps * eps

    def exact_stat(tau):
        return _sqrt_excess(e2 * tau)

    def jensen_stat(tau):
        return float(np.sqrt(np.expm1(e2 * np.sum(tau) / tau.shape[0])))

    seed = batch_2ustar_minus_u.seed or 0
    digest = f"eps={eps:g};k={batch_2ustar_minus_u.k};seed={seed}"
    exact = BoundReport(BoundKind.HITTING_EXACT, exact_stat(tau_reflected),
                        bootstrap_stderr(exact_stat, tau_reflected, n_resamples, seed), digest)
    jensen = BoundReport(BoundKind.HITTING_JENSEN, jensen_stat(tau_reflected),
                         bootstrap_stderr(jensen_stat, tau_reflected, n_resamples, seed), digest)
    naive = BoundReport(BoundKind.HITTING_NAIVE, jensen_stat(tau_plain),
                        bootstrap_stderr(jensen_stat, tau_plain, n_resamples, batch_plain.seed or 0),
                        f"eps={eps:g};k={batch_plain.k};seed={batch_plain.seed}")
    return HittingReports(exact, jensen, naive)


def exponentiated_l2_error(batch: PathBatch) -> float:
    """exp(E[int |delta|^2 ds]) for the auxiliary field accumulated along the batch"""
    require_aux(batch)
    return float(np.exp(np.sum(batch.aux_sq) / batch.k))
