"""
1-D finite-difference solvers for optimal controls and relative-error fields.

Every solve is a backward parabolic problem

    d_t phi + D phi_xx + beta phi_x - c phi = 0,   phi(., T) = terminal,

stepped with implicit Euler: (I - dt L_n) phi^n = phi^{n+1}, coefficients frozen at
t_n, homogeneous Neumann boundaries through ghost nodes. Advection is centered where
the cell Peclet number |beta| dx / (2 D) is at most 1 and upwind elsewhere, which keeps
(I - dt L_n) an M-matrix.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.linalg import solve_banded

from config import H_FIELD_TOLERANCE
from models import PdeKind, Provenance
from utils.errors import PdeError, RejectedInputError
from utils.sde import ControlField, RunningCost, SdeModel, TerminalCost

logger = logging.getLogger(__name__)

Coefficient = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    nx: int
    nt: int
    T: float

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise RejectedInputError(f"x_min {self.x_min} must be below x_max {self.x_max}")
        if self.nx < 3:
            raise RejectedInputError(f"need at least 3 nodes, got {self.nx}")
        if self.nt < 1:
            raise RejectedInputError(f"need at least one time step, got {self.nt}")
        if not self.T > 0:
            raise RejectedInputError(f"horizon must be positive, got {self.T}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    def explicit_stable(self, max_diffusion: float) -> bool:
        """dt <= dx^2 / (2 max diffusion); recorded on every solution, the solvers step implicitly"""
        return self.dt <= self.dx ** 2 / (2.0 * max_diffusion)

    def refined(self) -> "Grid1D":
        """Same domain with dx and dt halved"""
        return Grid1D(self.x_min, self.x_max, 2 * self.nx - 1, 2 * self.nt, self.T)

    def inner_half(self) -> np.ndarray:
        """Mask of nodes in the middle half of [x_min, x_max]"""
        span = self.x_max - self.x_min
        x = self.x
        return (x >= self.x_min + span / 4) & (x <= self.x_max - span / 4)


def _interp_slices(values: np.ndarray, grid: Grid1D, x: np.ndarray, t: float) -> np.ndarray:
    """Bilinear interpolation of a (nt+1, nx) field; clamped at the grid edges"""
    tau = min(max(t / grid.dt, 0.0), float(grid.nt))
    i0 = min(int(math.floor(tau)), grid.nt - 1)
    w = tau - i0
    nodes = grid.x
    lo = np.interp(x, nodes, values[i0])
    if w == 0.0:
        return lo
    return (1.0 - w) * lo + w * np.interp(x, nodes, values[i0 + 1])


def grid_control(values: np.ndarray, grid: Grid1D, label: str = "pde_control") -> ControlField:
    """ControlField evaluating a gridded 1-D control by bilinear interpolation in (x, t)"""
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.nt + 1, grid.nx):
        raise RejectedInputError(f"control values have shape {values.shape}, grid needs {(grid.nt + 1, grid.nx)}")

    def base(x, t):
        return _interp_slices(values, grid, x[:, 0], t)[:, None]

    return ControlField(base=base, dim=1, provenance=Provenance.PDE_DERIVED, label=label)


@dataclass
class PdeSolution:
    """Space-time field on a Grid1D, rows indexed by time step"""
    field: np.ndarray
    kind: PdeKind
    grid: Grid1D
    derived_control: Optional[ControlField] = None
    control_values: Optional[np.ndarray] = field(default=None, repr=False)
    explicit_stable: Optional[bool] = None

    def at(self, x: float, t: float = 0.0) -> float:
        return float(_interp_slices(self.field, self.grid, np.array([x], dtype=float), t)[0])

    def relative_error_at(self, x0: float) -> float:
        """sqrt(h(x0, 0) - 1) for an h_field solution"""
        if self.kind != PdeKind.H_FIELD:
            raise RejectedInputError("relative error is read off h_field solutions only")
        return float(np.sqrt(max(self.at(x0, 0.0) - 1.0, 0.0)))

    def to_csv(self, path: str):
        """Write columns t, x, value with full precision"""
        t, x = np.meshgrid(self.grid.times, self.grid.x, indexing="ij")
        rows = np.column_stack([t.ravel(), x.ravel(), self.field.ravel()])
        np.savetxt(path, rows, fmt="%.17g", delimiter=",", header="t,x,value", comments="")


def _full(value, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), (n,)).astype(float)


class Sweep(NamedTuple):
    field: np.ndarray
    explicit_stable: bool


def _operator_bands(D: np.ndarray, beta: np.ndarray, c: np.ndarray, dx: float):
    """Sub, main and super diagonals of L = D d_xx + beta d_x - c with Neumann ghosts"""
    diff = D / dx ** 2
    centered = np.abs(beta) * dx <= 2.0 * D
    up = np.where(centered, diff + beta / (2 * dx), diff + np.maximum(beta, 0.0) / dx)
    lo = np.where(centered, diff - beta / (2 * dx), diff - np.minimum(beta, 0.0) / dx)
    main = -up - lo - c
    # ghost node mirrors its inner neighbour
    up = up.copy()
    lo = lo.copy()
    up[0] += lo[0]
    lo[-1] += up[-1]
    return lo, main, up


def _stability(grid: Grid1D, max_diffusion: float) -> bool:
    stable = grid.explicit_stable(max_diffusion) if max_diffusion > 0 else True
    logger.debug("dt=%.3g dx=%.3g max diffusion %.3g: explicit step %s, implicit Euler used",
                 grid.dt, grid.dx, max_diffusion, "stable" if stable else "unstable")
    return stable


def solve_backward(grid: Grid1D, diffusion: Coefficient, advection: Coefficient,
                   reaction: Coefficient, terminal: np.ndarray) -> Sweep:
    """
    Implicit backward sweep; the field has shape (nt+1, nx) with row nt = terminal.

    Coefficient callables receive the node vector and t_n and return (nx,) arrays or
    scalars.
    """
    nx, dt, dx = grid.nx, grid.dt, grid.dx
    x = grid.x
    out = np.empty((grid.nt + 1, nx))
    out[grid.nt] = _full(terminal, nx)
    ab = np.empty((3, nx))
    d_max = 0.0
    for n in range(grid.nt - 1, -1, -1):
        t = n * dt
        D = _full(diffusion(x, t), nx)
        d_max = max(d_max, float(np.max(D)))
        lo, main, up = _operator_bands(D, _full(advection(x, t), nx), _full(reaction(x, t), nx), dx)
        ab[0, 1:] = -dt * up[:-1]
        ab[0, 0] = 0.0
        ab[1] = 1.0 - dt * main
        ab[2, :-1] = -dt * lo[1:]
        ab[2, -1] = 0.0
        out[n] = solve_banded((1, 1), ab, out[n + 1])
    return Sweep(out, _stability(grid, d_max))


class LogElimination(NamedTuple):
    """Matrix-only part of a log-space tridiagonal solve"""
    log_pivots: np.ndarray
    prefix: np.ndarray
    suffix: np.ndarray


def log_elimination(sub: np.ndarray, diag: np.ndarray, sup: np.ndarray) -> LogElimination:
    """
    Thomas elimination of sub_i w_{i-1} + diag_i w_i + sup_i w_{i+1} = rhs_i.

    The matrix must be a diagonally dominant M-matrix with sub, sup < 0 < diag. Forward
    elimination then reads r'_i = rhs_i / p_i + m_i r'_{i-1} and back substitution
    w_i = r'_i + c'_i w_{i+1}, both with positive coefficients; ``prefix`` and ``suffix``
    hold the cumulative log multipliers of the two recurrences.
    """
    a = -np.asarray(sub, dtype=float)
    b = np.asarray(diag, dtype=float)
    c = -np.asarray(sup, dtype=float)
    n = b.shape[0]
    if np.any(a[1:] <= 0) or np.any(c[:-1] <= 0):
        raise PdeError("log-space sweep needs strictly negative off-diagonals")
    pivots = np.empty(n)
    ratios = np.zeros(n)
    a_list, b_list, c_list = a.tolist(), b.tolist(), c.tolist()
    previous = 0.0
    for i in range(n):
        pivot = b_list[i] - a_list[i] * previous if i > 0 else b_list[0]
        if not pivot > 0:
            raise PdeError(f"log-space sweep lost diagonal dominance at node {i}", {"x_index": i})
        pivots[i] = pivot
        previous = c_list[i] / pivot if i < n - 1 else 0.0
        ratios[i] = previous
    log_pivots = np.log(pivots)
    prefix = np.zeros(n)
    prefix[1:] = np.cumsum(np.log(a[1:]) - log_pivots[1:])
    suffix = np.zeros(n)
    suffix[:-1] = np.cumsum(np.log(ratios[:-1])[::-1])[::-1]
    return LogElimination(log_pivots, prefix, suffix)


def log_substitute(elimination: LogElimination, log_rhs: np.ndarray) -> np.ndarray:
    """log w from log rhs; only positive terms are ever added, so any dynamic range is fine"""
    prefix, suffix = elimination.prefix, elimination.suffix
    forward = prefix + np.logaddexp.accumulate(np.asarray(log_rhs, dtype=float) - elimination.log_pivots - prefix)
    return suffix + np.logaddexp.accumulate((forward - suffix)[::-1])[::-1]


def log_tridiagonal_solve(sub: np.ndarray, diag: np.ndarray, sup: np.ndarray, log_rhs: np.ndarray) -> np.ndarray:
    return log_substitute(log_elimination(sub, diag, sup), log_rhs)


def solve_backward_log(grid: Grid1D, diffusion: Coefficient, advection: Coefficient,
                       reaction: Coefficient, log_terminal: np.ndarray) -> Sweep:
    """solve_backward carried on log phi, for fields whose values under- or overflow"""
    nx, dt, dx = grid.nx, grid.dt, grid.dx
    x = grid.x
    out = np.empty((grid.nt + 1, nx))
    out[grid.nt] = _full(log_terminal, nx)
    d_max = 0.0
    bands, elimination = None, None
    for n in range(grid.nt - 1, -1, -1):
        t = n * dt
        D = _full(diffusion(x, t), nx)
        d_max = max(d_max, float(np.max(D)))
        lo, main, up = _operator_bands(D, _full(advection(x, t), nx), _full(reaction(x, t), nx), dx)
        step_bands = (-dt * lo, 1.0 - dt * main, -dt * up)
        # constant coefficients keep the same elimination for every step
        if bands is None or not all(np.array_equal(p, q) for p, q in zip(bands, step_bands)):
            bands, elimination = step_bands, log_elimination(*step_bands)
        out[n] = log_substitute(elimination, out[n + 1])
    return Sweep(out, _stability(grid, d_max))


def _coefficients(model: SdeModel):
    if model.dim != 1:
        raise RejectedInputError("PDE solvers are one-dimensional")

    def b(x, t):
        return np.asarray(model.drift(x[:, None], t), dtype=float).reshape(-1)

    def sigma(x, t):
        sig = model.sigma(x[:, None], t)
        return _full(sig.reshape(-1) if sig.ndim == 3 else sig[0, 0], x.shape[0])

    return b, sigma


def _control_on_nodes(u: ControlField, x: np.ndarray, t: float) -> np.ndarray:
    return u(x[:, None], t)[:, 0]


def _check_positive(field_values: np.ndarray, grid: Grid1D, what: str):
    bad = ~(field_values > 0)
    if np.any(bad):
        n, i = np.unravel_index(int(np.argmax(bad)), bad.shape)
        raise PdeError(f"{what} lost positivity at t={n * grid.dt:.6g}, x={grid.x[i]:.6g}; grid or domain inadequate",
                       {"t_index": int(n), "x_index": int(i), "value": float(field_values[n, i])})


def _log_gradient_control(log_field: np.ndarray, scale: np.ndarray, grid: Grid1D) -> np.ndarray:
    return scale * np.gradient(log_field, grid.dx, axis=1)


def solve_psi_backward(model: SdeModel, f: Optional[RunningCost], g: Optional[TerminalCost],
                       grid: Grid1D) -> PdeSolution:
    """
    psi(x, t) = E[exp(-int_t^T f - g(X_T)) | X_t = x] from (d_t + L - f) psi = 0.

    The derived control is sigma d_x log psi.
    """
    b, sigma = _coefficients(model)
    x = grid.x
    terminal = np.exp(-np.asarray(g(x[:, None]), dtype=float)) if g is not None else np.ones(grid.nx)
    reaction = (lambda xs, t: np.asarray(f(xs[:, None], t), dtype=float)) if f is not None else (lambda xs, t: 0.0)
    sweep = solve_backward(grid, lambda xs, t: 0.5 * sigma(xs, t) ** 2, b, reaction, terminal)
    psi = sweep.field
    _check_positive(psi, grid, "psi")

    sig = np.stack([sigma(x, t) for t in grid.times])
    control = _log_gradient_control(np.log(psi), sig, grid)
    return PdeSolution(psi, PdeKind.PSI, grid, grid_control(control, grid, "pde_u_star"), control,
                       sweep.explicit_stable)


def solve_second_moment(model: SdeModel, u: ControlField, f: Optional[RunningCost],
                        g: Optional[TerminalCost], grid: Grid1D) -> PdeSolution:
    """M_u from (d_t + L - sigma u d_x - 2 f + |u|^2) M = 0, M(., T) = exp(-2 g)"""
    b, sigma = _coefficients(model)
    x = grid.x
    terminal = np.exp(-2.0 * np.asarray(g(x[:, None]), dtype=float)) if g is not None else np.ones(grid.nx)

    def advection(xs, t):
        return b(xs, t) - sigma(xs, t) * _control_on_nodes(u, xs, t)

    def reaction(xs, t):
        uu = _control_on_nodes(u, xs, t)
        running = np.asarray(f(xs[:, None], t), dtype=float) if f is not None else 0.0
        return 2.0 * running - uu * uu

    sweep = solve_backward(grid, lambda xs, t: 0.5 * sigma(xs, t) ** 2, advection, reaction, terminal)
    _check_positive(sweep.field, grid, "second moment")
    return PdeSolution(sweep.field, PdeKind.SECOND_MOMENT, grid, explicit_stable=sweep.explicit_stable)


def solve_h_field(model: SdeModel, u: ControlField, delta: ControlField, grid: Grid1D) -> PdeSolution:
    """
    h_u from (d_t + L^{u + 2 delta} + |delta|^2) h = 0, h(., T) = 1.

    r(u) = sqrt(h(x0, 0) - 1); see PdeSolution.relative_error_at.
    """
    b, sigma = _coefficients(model)

    def advection(xs, t):
        return b(xs, t) + sigma(xs, t) * (_control_on_nodes(u, xs, t) + 2.0 * _control_on_nodes(delta, xs, t))

    def reaction(xs, t):
        dd = _control_on_nodes(delta, xs, t)
        return -dd * dd

    sweep = solve_backward(grid, lambda xs, t: 0.5 * sigma(xs, t) ** 2, advection, reaction, np.ones(grid.nx))
    h = sweep.field
    low = np.min(h)
    if low < 1.0 - H_FIELD_TOLERANCE:
        n, i = np.unravel_index(int(np.argmin(h)), h.shape)
        raise PdeError(f"h field dropped to {low:.8g} at t={n * grid.dt:.6g}, x={grid.x[i]:.6g}",
                       {"t_index": int(n), "x_index": int(i), "value": float(low)})
    return PdeSolution(h, PdeKind.H_FIELD, grid, explicit_stable=sweep.explicit_stable)


class SmallNoiseV0(NamedTuple):
    value: Callable[[np.ndarray, float], np.ndarray]
    control: ControlField


def smallnoise_v0(alpha: float, T: float) -> SmallNoiseV0:
    """
    Zero-viscosity value V0(x, t) = alpha (1 - |x|/sqrt(alpha))^2 / (2 (T - t + 1)) and its
    control u0 = -d_x V0 in small-noise units, taking the right derivative at x = 0.
    """
    if not alpha > 0:
        raise RejectedInputError(f"alpha must be positive, got {alpha}")
    root = math.sqrt(alpha)

    def value(x, t):
        x = np.asarray(x, dtype=float)
        return alpha * (1.0 - np.abs(x) / root) ** 2 / (2.0 * (T - t + 1.0))

    def control(x, t):
        sign = np.where(x >= 0, 1.0, -1.0)
        return (root - np.abs(x)) * sign / (T - t + 1.0)

    return SmallNoiseV0(value, ControlField(base=control, dim=1, provenance=Provenance.ANALYTIC, label="u0"))


def solve_hjb_smallnoise(eta: float, alpha: float, grid: Grid1D) -> PdeSolution:
    """
    V^eta for X = sqrt(eta) W with terminal cost g(x) = alpha/2 (1 - |x|/sqrt(alpha))^2.

    Solved through log psi with psi = exp(-V/eta), which obeys the linear heat equation
    d_t psi + (eta/2) psi_xx = 0. The sweep runs on logarithms, so exp(-g/eta) may
    underflow anywhere on the grid. The derived control is u* = -d_x V^eta in
    small-noise units. The terminal slice of V is g itself.
    """
    if not eta > 0:
        raise RejectedInputError(f"eta must be positive, got {eta}")
    if not alpha > 0:
        raise RejectedInputError(f"alpha must be positive, got {alpha}")
    x = grid.x
    g = 0.5 * alpha * (1.0 - np.abs(x) / math.sqrt(alpha)) ** 2
    sweep = solve_backward_log(grid, lambda xs, t: 0.5 * eta, lambda xs, t: 0.0, lambda xs, t: 0.0, -g / eta)
    log_psi = sweep.field
    if not np.all(np.isfinite(log_psi)):
        n, i = np.unravel_index(int(np.argmax(~np.isfinite(log_psi))), log_psi.shape)
        raise PdeError(f"log psi is not finite at t={n * grid.dt:.6g}, x={grid.x[i]:.6g}; grid too coarse for eta={eta:g}",
                       {"eta": eta, "t_index": int(n), "x_index": int(i)})
    V = -eta * log_psi
    V[grid.nt] = g
    control = -np.gradient(V, grid.dx, axis=1)
    return PdeSolution(V, PdeKind.VALUE_V, grid, grid_control(control, grid, "pde_u_star_small_noise"), control,
                       sweep.explicit_stable)


def control_gap(solution: PdeSolution, v0: SmallNoiseV0, window=(0.05, 1.0), t: float = 0.0) -> float:
    """sup over the x-window of |d_x V^eta - d_x V0| at time t"""
    if solution.control_values is None:
        raise RejectedInputError("solution carries no control")
    x = solution.grid.x
    mask = (x >= window[0]) & (x <= window[1])
    numeric = _interp_slices(solution.control_values, solution.grid, x[mask], t)
    analytic_u0 = v0.control(x[mask][:, None], t)[:, 0]
    return float(np.max(np.abs(numeric - analytic_u0)))


class ExitSolution(NamedTuple):
    x: np.ndarray
    psi: np.ndarray
    u_star: np.ndarray


def solve_psi_exit(a: float, nx: int, diffusion: float = 1.0, reaction: float = 1.0) -> ExitSolution:
    """
    Elliptic exit problem D psi'' - c psi = 0 on (-a, a) with psi(+-a) = 1.

    For X = sqrt(2) W and running cost 1 this is psi(x) = E_x[exp(-tau)].
    """
    if not a > 0:
        raise RejectedInputError(f"half-width must be positive, got {a}")
    if nx < 3:
        raise RejectedInputError(f"need at least 3 nodes, got {nx}")
    x = np.linspace(-a, a, nx)
    dx = x[1] - x[0]
    m = nx - 2
    ab = np.zeros((3, m))
    ab[0, 1:] = diffusion / dx ** 2
    ab[1] = -2.0 * diffusion / dx ** 2 - reaction
    ab[2, :-1] = diffusion / dx ** 2
    rhs = np.zeros(m)
    rhs[0] -= diffusion / dx ** 2
    rhs[-1] -= diffusion / dx ** 2
    psi = np.ones(nx)
    psi[1:-1] = solve_banded((1, 1), ab, rhs)
    if np.any(psi <= 0):
        raise PdeError("exit solution lost positivity")
    u_star = math.sqrt(2.0 * diffusion) * np.gradient(np.log(psi), dx)
    return ExitSolution(x, psi, u_star)


def hitting_closedform(a: float):
    """(psi, u_star) for the exit problem on (-a, a): cosh(x)/cosh(a) and sqrt(2) tanh(x)"""
    if not a > 0:
        raise RejectedInputError(f"half-width must be positive, got {a}")
    cosh_a = math.cosh(a)
    root2 = math.sqrt(2.0)

    def psi(x):
        return np.cosh(x) / cosh_a

    def u_star(x):
        return root2 * np.tanh(x)

    return psi, u_star


def hitting_u_star_printed(x: np.ndarray) -> np.ndarray:
    """sqrt(2)(1 - e^{-2x}) / (e^{-2x} + 1), the same function as sqrt(2) tanh(x)"""
    e = np.exp(-2.0 * np.asarray(x, dtype=float))
    return math.sqrt(2.0) * (1.0 - e) / (e + 1.0)
