"""
Finite-dimensional divergences and relative-error bounds on densities.

Gaussian closed forms (KL, chi-square, shifted proposals), gridded 1-D densities for
Jensen-type functionals and density-ratio extremes, and the Pareto pair whose density
ratio is unbounded.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import cho_solve, solve_triangular

from config import (
    DIVERGENCE_GROWTH_FACTOR,
    NORMALIZATION_TOLERANCE,
    SPD_SYMMETRY_TOLERANCE,
)
from utils.errors import RejectedInputError
from utils.rng import named_stream

logger = logging.getLogger(__name__)


def _cholesky(matrix: np.ndarray, what: str = "covariance") -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise RejectedInputError(f"{what} must be a square matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise RejectedInputError(f"{what} has non-finite entries")
    if np.max(np.abs(matrix - matrix.T), initial=0.0) > SPD_SYMMETRY_TOLERANCE:
        raise RejectedInputError(f"{what} is not symmetric")
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise RejectedInputError(f"{what} is not positive definite")


def _log_det(chol: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


@dataclass
class GaussianMeasure:
    """N(mean, covariance) with a cached Cholesky factor"""
    mean: np.ndarray
    covariance: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if self.mean.ndim != 1:
            raise RejectedInputError("mean must be a vector")
        if self.covariance.shape != (self.dim, self.dim):
            raise RejectedInputError(
                f"covariance shape {self.covariance.shape} does not match mean length {self.dim}"
            )
        self.chol = _cholesky(self.covariance)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def marginal(self, j: int) -> "GaussianMeasure":
        """Law of the first j coordinates"""
        return GaussianMeasure(self.mean[:j], self.covariance[:j, :j])

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        z = solve_triangular(self.chol, (x - self.mean).T, lower=True)
        return -0.5 * np.sum(z * z, axis=0) - 0.5 * _log_det(self.chol) - 0.5 * self.dim * np.log(2 * np.pi)


@dataclass
class GriddedDensity1D:
    """Nonnegative density values on strictly increasing nodes"""
    nodes: np.ndarray
    values: np.ndarray
    mass: float = field(init=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.nodes.ndim != 1 or self.nodes.shape != self.values.shape:
            raise RejectedInputError("nodes and values must be vectors of equal length")
        if self.nodes.size < 2 or np.any(np.diff(self.nodes) <= 0):
            raise RejectedInputError("nodes must be strictly increasing with at least two entries")
        if np.any(~np.isfinite(self.values)) or np.any(self.values < 0):
            raise RejectedInputError("density values must be finite and nonnegative")
        self.mass = float(trapezoid(self.values, self.nodes))
        if self.mass <= 0:
            raise RejectedInputError("density has zero mass")

    def normalized(self) -> "GriddedDensity1D":
        return GriddedDensity1D(self.nodes, self.values / self.mass)

    def expectation(self, values: np.ndarray) -> float:
        return float(trapezoid(self.values * values, self.nodes))


@dataclass(frozen=True)
class ParetoDensity:
    """p(x) = alpha * x^(-alpha-1) on [1, inf)"""
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise RejectedInputError(f"Pareto shape must be positive, got {self.alpha}")

    def pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.where(x >= 1.0, self.alpha * x ** (-self.alpha - 1.0), 0.0)

    def on_nodes(self, nodes: np.ndarray) -> GriddedDensity1D:
        return GriddedDensity1D(nodes, self.pdf(nodes))


class RefinedBounds(NamedTuple):
    lower: float
    upper: float


class RatioExtremes(NamedTuple):
    m_hat: float
    M_hat: float
    diverging: bool


def _same_dim(p: GaussianMeasure, q: GaussianMeasure):
    if p.dim != q.dim:
        raise RejectedInputError(f"dimension mismatch: {p.dim} vs {q.dim}")


def gaussian_kl(p: GaussianMeasure, q: GaussianMeasure) -> float:
    """
    KL(p|q) for two Gaussians.

    Args:
        p: measure the expectation is taken under
        q: reference measure

    Returns:
        float: 0.5 * (tr(Sq^-1 Sp) + |Lq^-1 (mq - mp)|^2 - d + log det Sq - log det Sp)
    """
    _same_dim(p, q)
    if np.array_equal(p.mean, q.mean) and np.array_equal(p.covariance, q.covariance):
        return 0.0
    m = solve_triangular(q.chol, p.chol, lower=True)
    v = solve_triangular(q.chol, q.mean - p.mean, lower=True)
    kl = 0.5 * (float(np.sum(m * m)) + float(v @ v) - p.dim + _log_det(q.chol) - _log_det(p.chol))
    return max(kl, 0.0)


def gaussian_chi2(p: GaussianMeasure, q: GaussianMeasure) -> float:
    """chi^2(p|q) = int p^2/q - 1; infinite when 2 Sp^-1 - Sq^-1 is not positive definite"""
    _same_dim(p, q)
    if np.array_equal(p.mean, q.mean) and np.array_equal(p.covariance, q.covariance):
        return 0.0
    eye = np.eye(p.dim)
    p_inv = cho_solve((p.chol, True), eye)
    q_inv = cho_solve((q.chol, True), eye)
    a = 2.0 * p_inv - q_inv
    a = 0.5 * (a + a.T)
    try:
        a_chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return float("inf")
    b = 2.0 * p_inv @ p.mean - q_inv @ q.mean
    c = 2.0 * p.mean @ p_inv @ p.mean - q.mean @ q_inv @ q.mean
    a_inv_b = cho_solve((a_chol, True), b)
    log_int = -_log_det(p.chol) + 0.5 * _log_det(q.chol) - 0.5 * _log_det(a_chol) + 0.5 * b @ a_inv_b - 0.5 * c
    return max(float(np.expm1(log_int)), 0.0)


def _quadratic_form(sigma: np.ndarray, vec: np.ndarray, what: str) -> float:
    chol = _cholesky(sigma, what)
    vec = np.atleast_1d(np.asarray(vec, dtype=float))
    if vec.shape != (chol.shape[0],):
        raise RejectedInputError(f"vector length {vec.shape} does not match {what} dimension {chol.shape[0]}")
    w = chol.T @ vec
    return float(w @ w)


def perturbed_gaussian_error(sigma: np.ndarray, eps: np.ndarray) -> float:
    """Relative error sqrt(exp(eps.Sigma.eps) - 1) of the eps-shifted Gaussian proposal"""
    return float(np.sqrt(np.expm1(_quadratic_form(sigma, eps, "sigma"))))


def lognormal_error(gamma: np.ndarray, cov: np.ndarray) -> float:
    """Relative error of exp(gamma.Y + c), Y ~ N(m, cov); c and m drop out"""
    return float(np.sqrt(np.expm1(_quadratic_form(cov, gamma, "cov"))))


def kl_lower_bound(kl: float) -> float:
    if not np.isfinite(kl) or kl < 0:
        raise RejectedInputError(f"KL divergence must be finite and nonnegative, got {kl}")
    return float(np.sqrt(np.expm1(kl)))


def refined_bounds(m: float, M: float, kl_forward: float, kl_reverse: float) -> RefinedBounds:
    """
    Lower and upper relative-error bounds from ratio extremes m <= 1 <= M.

    kl_forward is KL(proposal|optimal), kl_reverse is KL(optimal|proposal).
    An infinite M yields an infinite upper bound.
    """
    if kl_forward < 0 or kl_reverse < 0 or np.isnan(kl_forward) or np.isnan(kl_reverse):
        raise RejectedInputError("divergences must be nonnegative")
    if m > M:
        raise RejectedInputError(f"m = {m} exceeds M = {M}")
    if not (0.0 <= m <= 1.0 <= M):
        raise RejectedInputError(f"need 0 <= m <= 1 <= M, got m = {m}, M = {M}")
    lower = float(np.sqrt(np.expm1(m * kl_forward + kl_reverse)))
    if np.isinf(M):
        upper = float("inf")
    else:
        upper = float(np.sqrt(np.expm1(M * kl_forward + kl_reverse)))
    return RefinedBounds(lower, upper)


def density_ratio_extremes(p: GriddedDensity1D, q: GriddedDensity1D) -> RatioExtremes:
    """
    Min and max of p/q over the shared nodes.

    ``diverging`` is set when the maximum over the whole grid exceeds the maximum over
    the nodes up to x_max/10 by more than DIVERGENCE_GROWTH_FACTOR (growth over the last
    decade). Grids not spanning a decade compare against the first tenth of the span.
    """
    if not np.array_equal(p.nodes, q.nodes):
        raise RejectedInputError("densities are gridded on different nodes")
    if np.any(q.values <= 0):
        idx = int(np.argmax(q.values <= 0))
        raise RejectedInputError(f"reference density vanishes at node {idx} (x = {q.nodes[idx]:g})")
    ratio = p.values / q.values
    m_hat = float(np.min(ratio))
    M_hat = float(np.max(ratio))

    nodes = p.nodes
    cutoff = nodes[-1] / 10.0
    if cutoff < nodes[0]:
        cutoff = nodes[0] + (nodes[-1] - nodes[0]) / 10.0
    head = ratio[nodes <= cutoff]
    diverging = bool(head.size > 0 and M_hat > DIVERGENCE_GROWTH_FACTOR * float(np.max(head)))
    if diverging:
        logger.info("density ratio grows by more than %g over the last decade: M_hat=%g",
                    DIVERGENCE_GROWTH_FACTOR, M_hat)
    return RatioExtremes(m_hat, M_hat, diverging)


def jensen_functional(f: Callable[[np.ndarray], np.ndarray], density: GriddedDensity1D,
                      phi: Callable[[np.ndarray], np.ndarray]) -> float:
    """E[f(phi)] - f(E[phi]) under a normalized gridded density"""
    if abs(density.mass - 1.0) > NORMALIZATION_TOLERANCE:
        raise RejectedInputError(f"density is not normalized (mass = {density.mass!r})")
    phi_values = np.asarray(phi(density.nodes), dtype=float)
    mean_phi = density.expectation(phi_values) / density.mass
    mean_f = density.expectation(np.asarray(f(phi_values), dtype=float)) / density.mass
    return float(mean_f - np.asarray(f(np.array([mean_phi])), dtype=float)[0])


def kl_marginal_chain(p: GaussianMeasure, q: GaussianMeasure) -> np.ndarray:
    """KL of the leading j-dimensional marginals for j = 1..d"""
    _same_dim(p, q)
    return np.array([gaussian_kl(p.marginal(j), q.marginal(j)) for j in range(1, p.dim + 1)])


def product_dimension_blowup(c: float, d: int) -> float:
    """sqrt(c^d - 1): relative error of a d-fold product proposal with per-factor second moment c"""
    if d < 1:
        raise RejectedInputError(f"dimension must be at least 1, got {d}")
    if not c > 1.0:
        raise RejectedInputError(f"per-factor second-moment ratio must exceed 1, got {c}")
    return float(np.sqrt(np.expm1(d * np.log(c))))


def optimal_gaussian_proposal(p: GaussianMeasure, alpha: np.ndarray) -> GaussianMeasure:
    """Zero-variance proposal N(mu - Sigma alpha, Sigma) for E_p[exp(-alpha.X)]"""
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), p.mean.shape)
    return GaussianMeasure(p.mean - p.covariance @ alpha, p.covariance)


def perturbed_gaussian_proposal(p: GaussianMeasure, alpha: np.ndarray, eps: np.ndarray) -> GaussianMeasure:
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), p.mean.shape)
    eps = np.broadcast_to(np.asarray(eps, dtype=float), p.mean.shape)
    return GaussianMeasure(p.mean - p.covariance @ (alpha + eps), p.covariance)


def gaussian_is_sample(p: GaussianMeasure, alpha: np.ndarray, eps: np.ndarray, k: int,
                       seed: int) -> np.ndarray:
    """
    Log weighted payoffs -alpha.X + log p(X) - log p_eps(X) for X drawn from the
    eps-shifted proposal.
    """
    if k < 1:
        raise RejectedInputError(f"sample count must be at least 1, got {k}")
    proposal = perturbed_gaussian_proposal(p, alpha, eps)
    rng = named_stream(seed, "gaussian_is")
    z = rng.standard_normal((k, p.dim))
    x = proposal.mean + z @ proposal.chol.T
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), p.mean.shape)
    return -x @ alpha + p.log_pdf(x) - proposal.log_pdf(x)


def pareto_pair(alpha: float, nodes: np.ndarray) -> Tuple[GriddedDensity1D, GriddedDensity1D]:
    """p = Pareto(alpha) and q = Pareto(2 alpha) on the given nodes; p/q = x^alpha / 2"""
    return ParetoDensity(alpha).on_nodes(nodes), ParetoDensity(2.0 * alpha).on_nodes(nodes)
