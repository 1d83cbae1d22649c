"""
Catalogue of the model problems used by the experiments.

Each problem bundles an SdeModel with its costs and, where one is known, the analytic
optimal control and reference value.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.linalg import expm

from config import HITTING_DT, HITTING_TIME_CAP, MAX_HURWITZ_RESAMPLES
from models import Provenance
from utils.errors import NumericalError, RejectedInputError
from utils.rng import named_stream, sub_seed
from utils.sde import (
    ControlField,
    PathBatch,
    SdeModel,
    StoppingSpec,
    analytic,
    constant,
    make_time_grid,
    plus,
    reflected,
    scaled,
    simulate_controlled,
    zero,
)

logger = logging.getLogger(__name__)

OU_MATRIX_LABEL = "ou_matrices"


# ---------------------------------------------------------------- Ornstein-Uhlenbeck

@dataclass
class OuProblem:
    """
    dX = A X dt + B dW, X_0 = x0, payoff exp(-alpha.X_T).

    With X_0 = 0 the target is exp(0.5 alpha' Sigma_T alpha) and the optimal control
    u*(t) = -B' exp(A'(T - t)) alpha does not depend on x.
    """
    A: np.ndarray
    B: np.ndarray
    alpha: np.ndarray
    T: float = 1.0
    x0: Optional[np.ndarray] = None
    resamples: int = 0
    matrix_seed: Optional[int] = None
    model: SdeModel = field(init=False, repr=False)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        d = self.A.shape[0]
        self.alpha = np.broadcast_to(np.asarray(self.alpha, dtype=float), (d,)).copy()
        self.x0 = np.zeros(d) if self.x0 is None else np.broadcast_to(np.asarray(self.x0, dtype=float), (d,)).copy()
        A, B = self.A, self.B
        self.model = SdeModel(drift=lambda x, t: x @ A.T, diffusion=lambda x, t: B,
                              x_init=self.x0, T=self.T, name=f"ou_d{d}")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def g(self, x: np.ndarray) -> np.ndarray:
        return x @ self.alpha

    def u_star(self) -> ControlField:
        A_t, B_t, alpha, T = self.A.T, self.B.T, self.alpha, self.T

        @lru_cache(maxsize=None)
        def at_time(t: float) -> np.ndarray:
            return -B_t @ expm(A_t * (T - t)) @ alpha

        return ControlField(base=lambda x, t: at_time(float(t)), dim=self.dim,
                            provenance=Provenance.ANALYTIC, label="ou_u_star")

    def terminal_covariance(self) -> np.ndarray:
        """Sigma_T = int_0^T e^{As} BB' e^{A's} ds via the Van Loan block exponential"""
        d = self.dim
        block = np.zeros((2 * d, 2 * d))
        block[:d, :d] = -self.A
        block[:d, d:] = self.B @ self.B.T
        block[d:, d:] = self.A.T
        F = expm(block * self.T)
        cov = F[d:, d:].T @ F[:d, d:]
        return 0.5 * (cov + cov.T)

    def euler_covariance(self, n_steps: int) -> np.ndarray:
        """Covariance of X_T under the Euler chain with n_steps steps"""
        dt = self.T / n_steps
        step = np.eye(self.dim) + self.A * dt
        noise = self.B @ self.B.T * dt
        cov = np.zeros((self.dim, self.dim))
        for _ in range(n_steps):
            cov = step @ cov @ step.T + noise
        return cov

    def log_z(self, n_steps: Optional[int] = None) -> float:
        """log E[exp(-alpha.X_T)]; the Euler-chain value when n_steps is given"""
        cov = self.terminal_covariance() if n_steps is None else self.euler_covariance(n_steps)
        if n_steps is None:
            mean = expm(self.A * self.T) @ self.x0
        else:
            mean = np.linalg.matrix_power(np.eye(self.dim) + self.A * self.T / n_steps, n_steps) @ self.x0
        return float(-self.alpha @ mean + 0.5 * self.alpha @ cov @ self.alpha)

    def z_exact(self, n_steps: Optional[int] = None) -> float:
        return math.exp(self.log_z(n_steps))


def is_hurwitz(A: np.ndarray) -> bool:
    return bool(np.max(np.linalg.eigvals(A).real) < 0)


def random_ou(d: int, seed: int, T: float = 1.0, alpha: float = 1.0) -> OuProblem:
    """
    A = -3I + Xi, B = I + Xi' with i.i.d. N(0, 1) entries drawn from the named
    ``ou_matrices`` stream of ``seed``; redrawn until A is Hurwitz.
    """
    if d < 1:
        raise RejectedInputError(f"dimension must be at least 1, got {d}")
    rng = named_stream(seed, OU_MATRIX_LABEL)
    for attempt in range(MAX_HURWITZ_RESAMPLES + 1):
        A = -3.0 * np.eye(d) + rng.standard_normal((d, d))
        B = np.eye(d) + rng.standard_normal((d, d))
        if is_hurwitz(A):
            if attempt:
                logger.info("OU drift matrix resampled %d times before it was Hurwitz", attempt)
            return OuProblem(A, B, np.full(d, alpha), T=T, resamples=attempt,
                             matrix_seed=sub_seed(seed, OU_MATRIX_LABEL))
    raise NumericalError(f"no Hurwitz drift matrix after {MAX_HURWITZ_RESAMPLES} resamples",
                         {"d": d, "seed": seed})


def scalar_ou(a: float, b: float, alpha: float = 1.0, T: float = 1.0, x0: float = 0.0) -> OuProblem:
    return OuProblem(np.array([[a]]), np.array([[b]]), np.array([alpha]), T=T, x0=np.array([x0]))


# ---------------------------------------------------------------- double well

@dataclass
class DoubleWellProblem:
    """Overdamped motion in Psi(x) = kappa (x^2 - 1)^2 with terminal cost rho (x - 1)^2"""
    kappa: float = 1.0
    rho: float = 1.0
    B: float = 1.0
    T: float = 1.0
    x0: float = -1.0
    model: SdeModel = field(init=False, repr=False)

    def __post_init__(self):
        kappa, B = self.kappa, self.B
        self.model = SdeModel(drift=lambda x, t: -4.0 * kappa * x * (x * x - 1.0),
                              diffusion=lambda x, t: np.array([[B]]),
                              x_init=np.array([self.x0]), T=self.T, name="double_well")

    def potential(self, x: np.ndarray) -> np.ndarray:
        return self.kappa * (x * x - 1.0) ** 2

    def g(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return self.rho * (x[:, 0] - 1.0) ** 2


# ---------------------------------------------------------------- exit problem

def hitting_model(x0: float = 0.0, time_cap: float = HITTING_TIME_CAP) -> SdeModel:
    """X = sqrt(2) W started at x0"""
    root2 = math.sqrt(2.0)
    return SdeModel(drift=lambda x, t: np.zeros_like(x), diffusion=lambda x, t: np.array([[root2]]),
                    x_init=np.array([x0]), T=time_cap, name="scaled_brownian")


def hitting_u_star() -> ControlField:
    """sqrt(2) d/dx log cosh(x), optimal for E[exp(-tau)] on any symmetric interval"""
    root2 = math.sqrt(2.0)
    return analytic(lambda x, t: root2 * np.tanh(x), 1, label="hitting_u_star")


EXIT_WRAPPERS = ("u", "u_star", "2u_star_minus_u", "zero")


def exit_control(eps: float, wrapper: str) -> ControlField:
    u_star = hitting_u_star()
    u = plus(u_star, constant(eps)) if eps != 0 else u_star
    if wrapper == "u":
        return u
    if wrapper == "u_star":
        return u_star
    if wrapper == "2u_star_minus_u":
        return reflected(u_star, u)
    if wrapper == "zero":
        return zero(1)
    raise RejectedInputError(f"unknown control wrapper '{wrapper}'; choose one of {', '.join(EXIT_WRAPPERS)}")


def brownian_exit_simulate(eps: float, stopping: StoppingSpec, dt: float = HITTING_DT, k: int = 10000,
                           seed: int = 0, wrapper: str = "u", *, x0: float = 0.0,
                           workers: Optional[int] = None) -> PathBatch:
    """
    First exit of sqrt(2) W from the stopping interval under u = u* + eps (or one of
    its wrappers), with running cost 1 so that running_cost equals the exit time and
    the payoff per path is exp(-tau).
    """
    if stopping.domain is None:
        raise RejectedInputError("exit simulation needs a first_exit stopping spec")
    n_steps = int(math.ceil(stopping.time_cap / dt - 1e-9))
    grid = make_time_grid(n_steps * dt, n_steps)
    return simulate_controlled(
        hitting_model(x0, grid.T), exit_control(eps, wrapper),
        f=lambda x, t: np.ones(x.shape[0]), g=None,
        grid=grid, stopping=stopping, k=k, seed=seed, workers=workers,
    )


# ---------------------------------------------------------------- small noise

@dataclass
class SmallNoiseProblem:
    """
    X = sqrt(eta) W from x0 with payoff exp(-g(X_T)/eta), g(x) = alpha/2 (1 - |x|/sqrt(alpha))^2.

    Controls in small-noise units enter the drift unscaled; in the simulator's units
    (diffusion sqrt(eta)) they are divided by sqrt(eta).
    """
    eta: float
    alpha: float = 1.0
    T: float = 1.0
    x0: float = 0.1
    model: SdeModel = field(init=False, repr=False)

    def __post_init__(self):
        if not self.eta > 0:
            raise RejectedInputError(f"eta must be positive, got {self.eta}")
        if not self.alpha > 0:
            raise RejectedInputError(f"alpha must be positive, got {self.alpha}")
        root_eta = math.sqrt(self.eta)
        self.model = SdeModel(drift=lambda x, t: np.zeros_like(x),
                              diffusion=lambda x, t: np.array([[root_eta]]),
                              x_init=np.array([self.x0]), T=self.T, name="small_noise")

    def g_small(self, x: np.ndarray) -> np.ndarray:
        return 0.5 * self.alpha * (1.0 - np.abs(x) / math.sqrt(self.alpha)) ** 2

    def g(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return self.g_small(x[:, 0]) / self.eta

    def to_noise_units(self, u_small: ControlField) -> ControlField:
        return scaled(u_small, 1.0 / math.sqrt(self.eta))
