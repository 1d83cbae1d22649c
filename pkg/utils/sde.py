"""
Controlled SDE simulation with Girsanov log-weights.

Paths follow dX = (b + sigma u) dt + sigma dW under Euler-Maruyama. Along each path the
log of dP/dP^u is accumulated as -u.dW - 0.5 |u|^2 dt with the same increment dW that
moved the state, so the weight is exact for the Euler chain. Two stopping modes are
supported: a fixed horizon and the first exit from a 1-D interval. Exits are detected
at grid points (with a linearly interpolated exit time) and, between grid points, by a
Brownian-bridge crossing test.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from config import BLOCK_SIZE, WORKERS
from models import Provenance, StoppingMode
from utils.errors import IncompleteBatchError, RejectedInputError, SimulationBlowUp
from utils.rng import run_blocks

logger = logging.getLogger(__name__)

Field = Callable[[np.ndarray, float], np.ndarray]
RunningCost = Callable[[np.ndarray, float], np.ndarray]
TerminalCost = Callable[[np.ndarray], np.ndarray]


@dataclass
class SdeModel:
    """
    Uncontrolled dynamics dX = b(X, t) dt + sigma(X, t) dW on [0, T].

    ``drift`` maps (n, d) states and a time to (n, d); ``diffusion`` maps them to
    (n, d, d) or to a single (d, d) matrix shared by all paths.
    """
    drift: Field
    diffusion: Callable[[np.ndarray, float], np.ndarray]
    x_init: np.ndarray
    T: float
    name: str = "sde"

    def __post_init__(self):
        self.x_init = np.atleast_1d(np.asarray(self.x_init, dtype=float))
        if self.x_init.ndim != 1 or not np.all(np.isfinite(self.x_init)):
            raise RejectedInputError("x_init must be a finite vector")
        if not self.T > 0:
            raise RejectedInputError(f"horizon must be positive, got {self.T}")

    @property
    def dim(self) -> int:
        return self.x_init.shape[0]

    def sigma(self, x: np.ndarray, t: float) -> np.ndarray:
        sig = np.asarray(self.diffusion(x, t), dtype=float)
        if sig.ndim == 0:
            sig = sig * np.eye(self.dim)
        return sig


def apply_sigma(sig: np.ndarray, v: np.ndarray) -> np.ndarray:
    """sigma @ v row-wise for a shared (d, d) or per-path (n, d, d) diffusion"""
    if sig.ndim == 2:
        return v @ sig.T
    return np.einsum("nij,nj->ni", sig, v)


@dataclass(frozen=True)
class ControlField:
    """
    u(x, t) = zeta * base(x, t) + perturbation(x, t).

    Calls map (n, d) states and a scalar time to (n, d). x-independent bases may
    return a (d,) vector; it is broadcast.
    """
    base: Field
    dim: int
    provenance: Provenance = Provenance.ANALYTIC
    perturbation: Optional[Field] = None
    zeta: float = 1.0
    label: str = ""

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.provenance == Provenance.ZERO:
            return np.zeros_like(x, dtype=float)
        out = np.broadcast_to(np.asarray(self.base(x, t), dtype=float), x.shape)
        if self.zeta != 1.0:
            out = self.zeta * out
        if self.perturbation is not None:
            out = out + np.broadcast_to(np.asarray(self.perturbation(x, t), dtype=float), x.shape)
        return np.array(out, dtype=float)

    @property
    def is_zero(self) -> bool:
        return self.provenance == Provenance.ZERO

    def describe(self) -> str:
        return self.label or self.provenance.value


def zero(d: int) -> ControlField:
    return ControlField(base=lambda x, t: 0.0, dim=d, provenance=Provenance.ZERO, label="zero")


def constant(vec: Union[float, Sequence[float]], d: Optional[int] = None) -> ControlField:
    vec = np.atleast_1d(np.asarray(vec, dtype=float))
    if d is not None:
        vec = np.broadcast_to(vec, (d,)).copy()
    return ControlField(base=lambda x, t: vec, dim=vec.shape[0], label=f"constant({vec.tolist()})")


def time_window(vec: Union[float, Sequence[float]], s: float, d: Optional[int] = None) -> ControlField:
    """vec on [0, s), zero afterwards"""
    vec = np.atleast_1d(np.asarray(vec, dtype=float))
    if d is not None:
        vec = np.broadcast_to(vec, (d,)).copy()
    off = np.zeros_like(vec)
    # grid times are step * dt; the step landing on s counts as outside
    edge = s - 1e-12 * max(1.0, abs(s))
    return ControlField(base=lambda x, t: vec if t < edge else off, dim=vec.shape[0],
                        label=f"window({vec.tolist()}, s={s})")


def sine_in_time(eps: float, alpha: float, d: int = 1) -> ControlField:
    return ControlField(base=lambda x, t: np.full(d, eps * math.sin(alpha * t)), dim=d,
                        label=f"{eps}*sin({alpha}t)")


def sine_in_space(eps: float, alpha: float, d: int = 1) -> ControlField:
    return ControlField(base=lambda x, t: eps * np.sin(alpha * x), dim=d, label=f"{eps}*sin({alpha}x)")


def analytic(fn: Field, d: int, label: str = "") -> ControlField:
    return ControlField(base=fn, dim=d, provenance=Provenance.ANALYTIC, label=label)


def _same_dim(a: ControlField, b: ControlField):
    if a.dim != b.dim:
        raise RejectedInputError(f"control dimensions differ: {a.dim} vs {b.dim}")


def plus(u: ControlField, v: ControlField) -> ControlField:
    _same_dim(u, v)
    if v.is_zero:
        return u
    if u.is_zero:
        return v
    return ControlField(base=u, dim=u.dim, provenance=Provenance.COMPOSED, perturbation=v,
                        label=f"{u.describe()} + {v.describe()}")


def scaled(u: ControlField, zeta: float) -> ControlField:
    if u.is_zero:
        return u
    return ControlField(base=u, dim=u.dim, provenance=Provenance.COMPOSED, zeta=float(zeta),
                        label=f"{zeta}*({u.describe()})")


def minus(u_star: ControlField, u: ControlField) -> ControlField:
    """delta = u_star - u"""
    _same_dim(u_star, u)
    if u.is_zero:
        return u_star
    return ControlField(base=u_star, dim=u.dim, provenance=Provenance.COMPOSED,
                        perturbation=lambda x, t: -u(x, t),
                        label=f"{u_star.describe()} - ({u.describe()})")


def reflected(u_star: ControlField, u: ControlField) -> ControlField:
    """2 u_star - u, i.e. u + 2 delta"""
    _same_dim(u_star, u)
    return ControlField(base=u_star, dim=u.dim, provenance=Provenance.COMPOSED, zeta=2.0,
                        perturbation=lambda x, t: -u(x, t),
                        label=f"2*({u_star.describe()}) - ({u.describe()})")


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise RejectedInputError(f"n_steps must be at least 1, got {self.n_steps}")
        if not self.T > 0:
            raise RejectedInputError(f"horizon must be positive, got {self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    def time(self, step: int) -> float:
        return step * self.dt


def make_time_grid(T: float, n_steps: int) -> TimeGrid:
    return TimeGrid(float(T), int(n_steps))


@dataclass(frozen=True)
class StoppingSpec:
    mode: StoppingMode = StoppingMode.FIXED_HORIZON
    domain: Optional[Tuple[float, float]] = None
    time_cap: Optional[float] = None
    bridge: bool = True

    def __post_init__(self):
        if self.mode == StoppingMode.FIRST_EXIT:
            if self.domain is None or not self.domain[0] < self.domain[1]:
                raise RejectedInputError("first_exit needs an interval (a, b) with a < b")
            if self.time_cap is None or not np.isfinite(self.time_cap) or self.time_cap <= 0:
                raise RejectedInputError("first_exit needs a finite positive time_cap")

    @classmethod
    def fixed_horizon(cls) -> "StoppingSpec":
        return cls(StoppingMode.FIXED_HORIZON)

    @classmethod
    def first_exit(cls, a: float, b: float, time_cap: float, bridge: bool = True) -> "StoppingSpec":
        """Exit from (a, b); ``bridge`` adds the Brownian-bridge test for crossings between grid points"""
        return cls(StoppingMode.FIRST_EXIT, (float(a), float(b)), float(time_cap), bool(bridge))


@dataclass
class PathBatch:
    """Per-path summary functionals of one simulation"""
    running_cost: np.ndarray
    terminal_cost: np.ndarray
    log_girsanov: np.ndarray
    exit_time: Optional[np.ndarray] = None
    incomplete: Optional[np.ndarray] = None
    aux_sq: Optional[np.ndarray] = None
    aux_dw: Optional[np.ndarray] = None
    stored_paths: Optional[np.ndarray] = None
    control_label: str = ""
    aux_label: Optional[str] = None
    seed: Optional[int] = None

    @property
    def k(self) -> int:
        return self.log_girsanov.shape[0]

    @property
    def complete(self) -> bool:
        return self.incomplete is None or not bool(np.any(self.incomplete))

    @property
    def n_incomplete(self) -> int:
        return 0 if self.incomplete is None else int(np.count_nonzero(self.incomplete))

    @property
    def log_payoff(self) -> np.ndarray:
        """log of exp(-W) * dP/dP^u per path"""
        return -self.running_cost - self.terminal_cost + self.log_girsanov

    def require_complete(self):
        if not self.complete:
            first = int(np.argmax(self.incomplete))
            raise IncompleteBatchError(
                f"{self.n_incomplete} of {self.k} paths hit the time cap before exiting",
                {"n_incomplete": self.n_incomplete, "first_path": first},
            )


@dataclass
class _BlockResult:
    running: np.ndarray
    terminal: np.ndarray
    logw: np.ndarray
    exit_time: Optional[np.ndarray] = None
    incomplete: Optional[np.ndarray] = None
    aux_sq: Optional[np.ndarray] = None
    aux_dw: Optional[np.ndarray] = None
    paths: Optional[np.ndarray] = None
    blow_up: Optional[Tuple[int, int, float]] = field(default=None)


def _first_bad(x: np.ndarray) -> Optional[int]:
    bad = ~np.all(np.isfinite(x), axis=1)
    if np.any(bad):
        return int(np.argmax(bad))
    return None


def _fixed_horizon_block(model, control, f, g, grid, aux_field, store_paths,
                         start, stop, rng) -> _BlockResult:
    n, d, dt = stop - start, model.dim, grid.dt
    sqrt_dt = math.sqrt(dt)
    x = np.tile(model.x_init, (n, 1))
    running = np.zeros(n)
    logw = np.zeros(n)
    aux_sq = np.zeros(n) if aux_field is not None else None
    aux_dw = np.zeros(n) if aux_field is not None else None
    paths = None
    if store_paths:
        paths = np.empty((n, grid.n_steps + 1, d))
        paths[:, 0] = x

    for step in range(grid.n_steps):
        t = grid.time(step)
        dw = rng.standard_normal((n, d)) * sqrt_dt
        sig = model.sigma(x, t)
        drift = np.asarray(model.drift(x, t), dtype=float)
        if f is not None:
            running += f(x, t) * dt
        if not control.is_zero:
            u = control(x, t)
            logw += -np.sum(u * dw, axis=1) - 0.5 * np.sum(u * u, axis=1) * dt
            drift = drift + apply_sigma(sig, u)
        if aux_field is not None:
            delta = aux_field(x, t)
            aux_sq += np.sum(delta * delta, axis=1) * dt
            aux_dw += np.sum(delta * dw, axis=1)
        x = x + drift * dt + apply_sigma(sig, dw)
        bad = _first_bad(x)
        if bad is not None:
            return _BlockResult(running, running, logw, blow_up=(start + bad, step + 1, t + dt))
        if paths is not None:
            paths[:, step + 1] = x

    terminal = np.asarray(g(x), dtype=float) if g is not None else np.zeros(n)
    return _BlockResult(running, terminal, logw, aux_sq=aux_sq, aux_dw=aux_dw, paths=paths)


def _bridge_crossings(x_from: np.ndarray, x_to: np.ndarray, lo: float, hi: float, var,
                      uniform: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Brownian-bridge test for a barrier crossing between two grid points inside (lo, hi).

    With the coefficients frozen over the step, the bridge from x_from to x_to touches a
    barrier c with probability exp(-2 (c - x_from)(c - x_to) / (sigma^2 dt)).
    """
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        p_lo = np.exp(-2.0 * (x_from - lo) * (x_to - lo) / var)
        p_hi = np.exp(-2.0 * (hi - x_from) * (hi - x_to) / var)
    hit_lo = uniform < p_lo
    hit_hi = ~hit_lo & (uniform < p_lo + p_hi)
    return hit_lo, hit_hi


def _first_exit_block(model, control, f, g, grid, stopping, aux_field, start, stop, rng) -> _BlockResult:
    n, dt = stop - start, grid.dt
    sqrt_dt = math.sqrt(dt)
    lo, hi = stopping.domain
    max_steps = int(math.ceil(stopping.time_cap / dt - 1e-9))
    x = np.tile(model.x_init, (n, 1))
    running = np.zeros(n)
    logw = np.zeros(n)
    exit_time = np.full(n, np.nan)
    incomplete = np.zeros(n, dtype=bool)
    aux_sq = np.zeros(n) if aux_field is not None else None
    aux_dw = np.zeros(n) if aux_field is not None else None
    active = np.arange(n)

    step = 0
    while active.size and step < max_steps:
        t = step * dt
        xa = x[active]
        # normals, then bridge uniforms, only for live paths, in path order
        dw = rng.standard_normal((active.size, 1)) * sqrt_dt
        uniform = rng.random(active.size) if stopping.bridge else None
        sig = model.sigma(xa, t)
        drift = np.asarray(model.drift(xa, t), dtype=float)
        u = None
        if not control.is_zero:
            u = control(xa, t)
            drift = drift + apply_sigma(sig, u)
        x_new = xa + drift * dt + apply_sigma(sig, dw)
        bad = _first_bad(x_new)
        if bad is not None:
            return _BlockResult(running, running, logw, blow_up=(start + int(active[bad]), step + 1, t + dt))

        below = x_new[:, 0] <= lo
        exited = below | (x_new[:, 0] >= hi)
        boundary = np.where(below, lo, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            theta = np.where(exited, (boundary - xa[:, 0]) / (x_new[:, 0] - xa[:, 0]), 1.0)
        theta = np.clip(theta, 0.0, 1.0)
        if uniform is not None:
            var = np.square(sig[..., 0, 0]) * dt
            hit_lo, hit_hi = _bridge_crossings(xa[:, 0], x_new[:, 0], lo, hi, var, uniform)
            bridged = ~exited & (hit_lo | hit_hi)
            # crossing time inside the step is unknown; take the midpoint
            boundary = np.where(bridged, np.where(hit_lo, lo, hi), boundary)
            theta = np.where(bridged, 0.5, theta)
            exited = exited | bridged
        step_dt = theta * dt

        if f is not None:
            running[active] += f(xa, t) * step_dt
        # weight and auxiliary integrals always cover the full drawn increment
        if u is not None:
            logw[active] += -np.sum(u * dw, axis=1) - 0.5 * np.sum(u * u, axis=1) * dt
        if aux_field is not None:
            delta = aux_field(xa, t)
            aux_sq[active] += np.sum(delta * delta, axis=1) * dt
            aux_dw[active] += np.sum(delta * dw, axis=1)

        x_new[exited, 0] = boundary[exited]
        x[active] = x_new
        exit_time[active[exited]] = t + step_dt[exited]
        active = active[~exited]
        step += 1

    if active.size:
        incomplete[active] = True
        exit_time[active] = step * dt
    terminal = np.asarray(g(x), dtype=float) if g is not None else np.zeros(n)
    return _BlockResult(running, terminal, logw, exit_time=exit_time, incomplete=incomplete,
                        aux_sq=aux_sq, aux_dw=aux_dw)


def _merge(parts, name: str) -> Optional[np.ndarray]:
    arrays = [getattr(p, name) for p in parts]
    if arrays[0] is None:
        return None
    return np.concatenate(arrays, axis=0)


def simulate_controlled(model: SdeModel, control: ControlField,
                        f: Optional[RunningCost], g: Optional[TerminalCost],
                        grid: TimeGrid, stopping: StoppingSpec, k: int, seed: int, *,
                        aux_field: Optional[ControlField] = None, store_paths: bool = False,
                        workers: Optional[int] = None, block_size: Optional[int] = None) -> PathBatch:
    """
    Simulate k controlled paths and accumulate running cost, terminal cost and the
    Girsanov log-weight log dP/dP^u.

    Args:
        model: uncontrolled dynamics
        control: drift control u; the zero field leaves every log-weight at exactly 0.0
        f: running cost f(x, t) -> (n,), or None
        g: terminal cost g(x) -> (n,), or None
        grid: Euler time grid (its dt is also the step of first-exit runs)
        stopping: fixed horizon or first exit from a 1-D interval
        k: number of paths
        seed: root seed; results depend on (seed, k, grid, block size) only
        aux_field: optional field delta whose integrals int |delta|^2 ds and
            int delta.dW are accumulated per path
        store_paths: keep full trajectories (fixed horizon only)
        workers: thread count for path blocks

    Returns:
        PathBatch: per-path functionals in path-index order
    """
    if control.dim != model.dim:
        raise RejectedInputError(f"control dimension {control.dim} does not match model dimension {model.dim}")
    if aux_field is not None and aux_field.dim != model.dim:
        raise RejectedInputError("auxiliary field dimension does not match the model")
    if k < 1:
        raise RejectedInputError(f"sample count must be at least 1, got {k}")

    first_exit = stopping.mode == StoppingMode.FIRST_EXIT
    if first_exit:
        lo, hi = stopping.domain
        if model.dim != 1:
            raise RejectedInputError("first-exit stopping is only supported in one dimension")
        if not lo < model.x_init[0] < hi:
            raise RejectedInputError(f"x_init {model.x_init[0]} is not inside ({lo}, {hi})")
        if store_paths:
            raise RejectedInputError("path storage is only available for fixed-horizon runs")
    elif abs(grid.T - model.T) > 1e-12 * model.T:
        raise RejectedInputError(f"time grid horizon {grid.T} differs from model horizon {model.T}")

    if not control.is_zero:
        sig0 = model.sigma(model.x_init[None, :], 0.0)
        if not np.isfinite(np.linalg.cond(sig0.reshape(-1, model.dim, model.dim)).max()):
            raise RejectedInputError("diffusion matrix is singular at the initial state")

    def block(b, start, stop, rng):
        if first_exit:
            return _first_exit_block(model, control, f, g, grid, stopping, aux_field, start, stop, rng)
        return _fixed_horizon_block(model, control, f, g, grid, aux_field, store_paths, start, stop, rng)

    parts = run_blocks(block, k, seed, workers=workers or WORKERS, block_size=block_size or BLOCK_SIZE)

    for part in parts:
        if part.blow_up is not None:
            path_index, step, time = part.blow_up
            logger.error("simulation blow-up on path %d at step %d", path_index, step)
            raise SimulationBlowUp(path_index, step, time)

    batch = PathBatch(
        running_cost=_merge(parts, "running"),
        terminal_cost=_merge(parts, "terminal"),
        log_girsanov=_merge(parts, "logw"),
        exit_time=_merge(parts, "exit_time"),
        incomplete=_merge(parts, "incomplete"),
        aux_sq=_merge(parts, "aux_sq"),
        aux_dw=_merge(parts, "aux_dw"),
        stored_paths=_merge(parts, "paths"),
        control_label=control.describe(),
        aux_label=aux_field.describe() if aux_field is not None else None,
        seed=seed,
    )
    if not batch.complete:
        logger.warning("%d of %d paths reached the time cap %g", batch.n_incomplete, k, stopping.time_cap)
    return batch
