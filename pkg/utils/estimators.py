"""
Statistics of importance-sampled path batches.

Weights w_i = exp(-running_i - terminal_i + log_girsanov_i) are handled in log space:
every statistic is computed on w_i / max_j w_j and rescaled once, so strongly
suboptimal controls do not overflow.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from config import BOOTSTRAP_RESAMPLES, ESS_WARNING_THRESHOLD
from utils.errors import MissingAccumulatorError, RejectedInputError
from utils.rng import named_stream
from utils.sde import ControlField, PathBatch

logger = logging.getLogger(__name__)


@dataclass
class IsEstimate:
    """Importance-sampling estimate of Z with its relative error"""
    z_hat: float
    var_hat: float
    rel_err_hat: float
    ess: float
    k: int
    stderr_z: float
    rel_err_stderr: Optional[float] = None
    flags: List[str] = field(default_factory=list)


def bootstrap_stderr(statistic: Callable[[np.ndarray], float], samples: np.ndarray,
                     n_resamples: int = BOOTSTRAP_RESAMPLES, seed: int = 0) -> float:
    """
    Nonparametric bootstrap standard error of ``statistic``.

    Resampling indices come from the named ``bootstrap`` stream of ``seed``, so the
    result is reproducible.
    """
    samples = np.asarray(samples)
    k = samples.shape[0]
    if k < 2 or n_resamples < 2:
        return 0.0
    rng = named_stream(seed, "bootstrap")
    values = np.empty(n_resamples)
    for i in range(n_resamples):
        values[i] = statistic(samples[rng.integers(0, k, size=k)])
    finite = values[np.isfinite(values)]
    if finite.size < 2:
        return float("nan")
    return float(np.std(finite, ddof=1))


def _shifted(log_w: np.ndarray) -> Tuple[np.ndarray, float]:
    log_w = np.asarray(log_w, dtype=float)
    if log_w.size == 0:
        raise RejectedInputError("empty batch")
    if np.any(np.isnan(log_w)) or np.any(log_w == np.inf):
        raise RejectedInputError("log-weights contain NaN or +inf")
    shift = float(np.max(log_w))
    if shift == -np.inf:
        raise RejectedInputError("all weights are zero")
    return np.exp(log_w - shift), shift


def relative_error(w: np.ndarray) -> float:
    """sqrt of the unbiased sample variance over the sample mean; scale invariant"""
    k = w.shape[0]
    mean = np.sum(w) / k
    if k < 2 or mean <= 0:
        return 0.0 if k < 2 else float("inf")
    var = np.sum((w - mean) ** 2) / (k - 1)
    return float(np.sqrt(var) / mean)


def estimate_log_weights(log_w: np.ndarray, *, bootstrap: bool = True,
                         n_resamples: int = BOOTSTRAP_RESAMPLES, seed: int = 0) -> IsEstimate:
    """
    Importance-sampling statistics from per-sample log weighted payoffs.

    Returns:
        IsEstimate: z_hat = mean(w), unbiased variance, rel_err_hat = sqrt(var)/z_hat,
        ess = (sum w)^2 / sum w^2, stderr_z = sqrt(var/k)
    """
    w, shift = _shifted(log_w)
    k = w.shape[0]
    total = np.sum(w)
    mean = total / k
    var = np.sum((w - mean) ** 2) / (k - 1) if k > 1 else 0.0
    scale = np.exp(shift)
    with np.errstate(over="ignore"):
        z_hat = float(scale * mean)
        var_hat = float(scale * scale * var)
    rel_err = float(np.sqrt(var) / mean)
    ess = float(total * total / np.sum(w * w))
    stderr_z = float(scale * np.sqrt(var / k))

    flags = []
    if ess < ESS_WARNING_THRESHOLD:
        flags.append("low_ess")
        logger.warning("effective sample size %.1f below %d (k=%d)", ess, ESS_WARNING_THRESHOLD, k)

    rel_err_stderr = bootstrap_stderr(relative_error, w, n_resamples, seed) if bootstrap else None
    return IsEstimate(z_hat, var_hat, rel_err, ess, k, stderr_z, rel_err_stderr, flags)


def importance_estimate(batch: PathBatch, *, bootstrap: bool = True,
                        n_resamples: int = BOOTSTRAP_RESAMPLES) -> IsEstimate:
    batch.require_complete()
    return estimate_log_weights(batch.log_payoff, bootstrap=bootstrap, n_resamples=n_resamples,
                                seed=batch.seed or 0)


def chi2_hat(batch: PathBatch, z_reference: Optional[float] = None) -> float:
    """
    chi-square estimate of the proposal against the optimal measure.

    Without ``z_reference`` this is rel_err_hat squared from the same weights. With it,
    the mean of (w / z_reference - 1)^2 is returned instead, which removes the ratio
    bias of dividing by the sampled mean.
    """
    if z_reference is None:
        est = importance_estimate(batch, bootstrap=False)
        return est.rel_err_hat ** 2
    if not z_reference > 0:
        raise RejectedInputError(f"reference value must be positive, got {z_reference}")
    batch.require_complete()
    w, shift = _shifted(batch.log_payoff)
    ratio = w * np.exp(shift - np.log(z_reference))
    return float(np.sum((ratio - 1.0) ** 2) / ratio.shape[0])


def weight_mean(batch: PathBatch) -> Tuple[float, float]:
    """Mean of exp(log dP/dP^u) and its standard error; the mean should be 1"""
    w = np.exp(batch.log_girsanov)
    k = w.shape[0]
    return float(np.sum(w) / k), float(np.std(w, ddof=1) / np.sqrt(k)) if k > 1 else 0.0


def require_aux(batch: PathBatch, delta: Optional[ControlField] = None):
    if batch.aux_sq is None or batch.aux_dw is None:
        raise MissingAccumulatorError("batch was simulated without an auxiliary field")
    if delta is not None and batch.aux_label is not None and batch.aux_label != delta.describe():
        raise RejectedInputError(
            f"batch accumulated '{batch.aux_label}', not '{delta.describe()}'"
        )


def path_kl_estimate(delta: ControlField, batch_under_ustar: PathBatch) -> float:
    """0.5 * E[int |delta|^2 ds] along paths simulated under u*"""
    if delta.is_zero:
        return 0.0
    require_aux(batch_under_ustar, delta)
    aux = batch_under_ustar.aux_sq
    return float(0.5 * np.sum(aux) / aux.shape[0])
