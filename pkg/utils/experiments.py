"""
Experiment registry, config resolution and output writing.

Each registered experiment turns one sweep value into a SweepRow: the sampled relative
error with its bootstrap stderr and every formula or bound that applies. A run writes
the rows as CSV (17 significant digits, nothing time-dependent) and a JSON summary with
the config digest, sub-seeds, timings and the outcome of built-in sanity assertions.
"""
import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from config import (
    BLOCK_SIZE,
    CONTROL_GAP_WINDOW,
    DEFAULT_K,
    DOUBLE_WELL_GRID,
    EXPERIMENT_DEFAULTS,
    FULL_K,
    SMALL_NOISE_GRID,
)
from models import AssertionResult, ExactForm, ExperimentConfig, ExperimentName, RunSummary, SweepRow
from observability import run_logger
from utils.bounds import (
    component_constant_error,
    constant_delta_error,
    exact_error_mc,
    exponentiated_l2_error,
    hitting_error,
    holder_bound_mc,
    holder_closed_form,
    integrate_square,
    kl_lower_closed_form,
    sine_perturbation_error,
)
from utils.dynamics import DoubleWellProblem, SmallNoiseProblem, brownian_exit_simulate, random_ou
from utils.errors import ConfigError, PathweightError
from utils.estimators import chi2_hat, estimate_log_weights, importance_estimate, path_kl_estimate
from utils.measures import (
    GaussianMeasure,
    gaussian_is_sample,
    gaussian_kl,
    kl_lower_bound,
    optimal_gaussian_proposal,
    perturbed_gaussian_error,
    perturbed_gaussian_proposal,
    product_dimension_blowup,
)
from utils.pde import Grid1D, control_gap, smallnoise_v0, solve_h_field, solve_hjb_smallnoise, solve_psi_backward
from utils.rng import sub_seed
from utils.sde import (
    ControlField,
    StoppingSpec,
    constant,
    make_time_grid,
    minus,
    plus,
    scaled,
    simulate_controlled,
    sine_in_space,
    sine_in_time,
    time_window,
    zero,
)

logger = logging.getLogger(__name__)

BASE_COLUMNS = ("swept_value", "estimate", "stderr")
ORDER_SLACK = 1e-12


@dataclass
class RunContext:
    config: ExperimentConfig
    sub_seeds: Dict[str, Any] = field(default_factory=dict)
    cache: Dict[Any, Any] = field(default_factory=dict)

    @property
    def workers(self) -> int:
        return self.config.workers

    def seed_for(self, label: str) -> int:
        seed = sub_seed(self.config.seed, label)
        self.sub_seeds[label] = seed
        return seed


@dataclass
class RowOutcome:
    estimate: float
    stderr: float
    bounds: Dict[str, float]
    flags: List[str] = field(default_factory=list)
    checks: Dict[str, bool] = field(default_factory=dict)


@dataclass
class ExperimentSpec:
    name: ExperimentName
    columns: Tuple[str, ...]
    row: Callable[[ExperimentConfig, RunContext], RowOutcome]
    description: str


@dataclass
class ExperimentResult:
    rows: List[SweepRow]
    summary: RunSummary
    columns: Tuple[str, ...]


def _stderr(value: Optional[float]) -> float:
    return 0.0 if value is None or not np.isfinite(value) else float(value)


# ---------------------------------------------------------------- OU rows

def _ou_problem(cfg: ExperimentConfig, ctx: RunContext):
    key = ("ou", cfg.d, cfg.T)
    if key not in ctx.cache:
        problem = random_ou(cfg.d, cfg.seed, T=cfg.T)
        ctx.sub_seeds[f"ou_matrices_d{cfg.d}"] = problem.matrix_seed
        ctx.sub_seeds[f"ou_resamples_d{cfg.d}"] = problem.resamples
        ctx.cache[key] = problem
    return ctx.cache[key]


def _ou_row(cfg: ExperimentConfig, ctx: RunContext, perturbation: ControlField, integral_sq: float,
            exact: float) -> RowOutcome:
    problem = _ou_problem(cfg, ctx)
    u = plus(problem.u_star(), perturbation)
    batch = simulate_controlled(problem.model, u, None, problem.g, make_time_grid(cfg.T, cfg.n_steps),
                                StoppingSpec.fixed_horizon(), cfg.k, cfg.seed, workers=ctx.workers)
    est = importance_estimate(batch)
    bounds = {
        "exact": exact,
        "kl_lower": kl_lower_closed_form(integral_sq),
        "holder_upper": holder_closed_form(integral_sq),
    }
    checks = {"chi2_identity": chi2_hat(batch) == est.rel_err_hat ** 2}
    return RowOutcome(est.rel_err_hat, _stderr(est.rel_err_stderr), bounds, est.flags, checks)


def ou_perturbation_row(cfg: ExperimentConfig, ctx: RunContext) -> RowOutcome:
    integral_sq = cfg.d * cfg.eps ** 2 * cfg.T
    return _ou_row(cfg, ctx, constant(cfg.eps, cfg.d), integral_sq,
                   component_constant_error(cfg.eps, cfg.d, cfg.T))


def ou_windowed_row(cfg: ExperimentConfig, ctx: RunContext) -> RowOutcome:
    d, eps, s = cfg.d, cfg.eps, cfg.s
    envelope = lambda t: np.full(d, eps) if t < s else np.zeros(d)
    integral_sq = integrate_square(envelope, cfg.T, breakpoints=[s])
    exact = constant_delta_error(envelope, T=cfg.T, breakpoints=[s]).lower
    return _ou_row(cfg, ctx, time_window(eps, s, d), integral_sq, exact)


# ---------------------------------------------------------------- double well rows

def _dw_grid(cfg: ExperimentConfig) -> Grid1D:
    return Grid1D(
        cfg.x_min if cfg.x_min is not None else DOUBLE_WELL_GRID["x_min"],
        cfg.x_max if cfg.x_max is not None else DOUBLE_WELL_GRID["x_max"],
        cfg.nx or DOUBLE_WELL_GRID["nx"],
        cfg.nt or DOUBLE_WELL_GRID["nt"],
        cfg.T,
    )


def _dw_setup(cfg: ExperimentConfig, ctx: RunContext):
    key = ("dw", cfg.kappa, cfg.rho, cfg.B, cfg.T, cfg.x0, cfg.x_min, cfg.x_max, cfg.nx, cfg.nt)
    if key not in ctx.cache:
        problem = DoubleWellProblem(cfg.kappa, cfg.rho, cfg.B, cfg.T, cfg.x0)
        grid = _dw_grid(cfg)
        psi = solve_psi_backward(problem.model, None, problem.g, grid)
        ctx.cache[key] = (problem, grid, psi.derived_control)
    return ctx.cache[key]


def _dw_row(cfg: ExperimentConfig, ctx: RunContext, u: ControlField, closed_form_sq: Optional[float] = None,
            exact: Optional[float] = None, state_dependent: bool = False) -> RowOutcome:
    problem, pde_grid, u_star = _dw_setup(cfg, ctx)
    grid = make_time_grid(cfg.T, cfg.n_steps)
    batch = simulate_controlled(problem.model, u, None, problem.g, grid, StoppingSpec.fixed_horizon(),
                                cfg.k, cfg.seed, workers=ctx.workers)
    est = importance_estimate(batch)
    flags = list(est.flags)
    delta = minus(u_star, u)
    bounds: Dict[str, float] = {}
    if exact is not None:
        bounds["exact"] = exact
    if closed_form_sq is not None:
        bounds["kl_lower"] = kl_lower_closed_form(closed_form_sq)
        bounds["holder_upper"] = holder_closed_form(closed_form_sq)
    if state_dependent:
        # delta varies with x: KL, Hoelder and the exact formula are all sampled
        star_batch = simulate_controlled(problem.model, u_star, None, problem.g, grid,
                                         StoppingSpec.fixed_horizon(), cfg.k, ctx.seed_for("path_kl"),
                                         aux_field=delta, workers=ctx.workers)
        bounds["kl_lower"] = kl_lower_bound(path_kl_estimate(delta, star_batch))
        holder = holder_bound_mc(problem.model, u, delta, grid, cfg.k, ctx.seed_for("holder"),
                                 workers=ctx.workers)
        exact_mc = exact_error_mc(problem.model, u, delta, ExactForm.UNDER_U_PLUS_2DELTA, grid, cfg.k,
                                  ctx.seed_for("exact_mc"), workers=ctx.workers)
        bounds["holder_upper"] = holder.value
        bounds["holder_upper_stderr"] = _stderr(holder.stderr)
        bounds["exact_mc"] = exact_mc.value
        bounds["exact_mc_stderr"] = _stderr(exact_mc.stderr)
        flags += [f"{report.kind.value}:{flag}" for report in (holder, exact_mc) for flag in report.flags]
    h = solve_h_field(problem.model, u, delta, pde_grid)
    bounds["pde_exact"] = h.relative_error_at(cfg.x0)
    checks = {"chi2_identity": chi2_hat(batch) == est.rel_err_hat ** 2}
    return RowOutcome(est.rel_err_hat, _stderr(est.rel_err_stderr), bounds, flags, checks)


def doublewell_naive_row(cfg: ExperimentConfig, ctx: RunContext) -> RowOutcome:
    return _dw_row(cfg, ctx, zero(1), state_dependent=True)


def doublewell_additive_row(cfg: ExperimentConfig, ctx: RunContext) -> RowOutcome:
    _, _, u_star = _dw_setup(cfg, ctx)
    integral_sq = cfg.eps ** 2 * cfg.T
    return _dw_row(cfg, ctx, plus(u_star, constant(cfg.eps)), integral_sq,
                   component_constant_error(cfg.eps, 1, cfg.T))


def doublewell_multiplicative_row(cfg: ExperimentConfig, ctx: RunContext) -> RowOutcome:
    _, _, u_star = _dw_setup(cfg, ctx)
    return _dw_row(cfg, ctx, scaled(u_star, cfg.zeta), state_dependent=True)


def doublewell_sine_time_row(cfg: ExperimentConfig, ctx: RunContext) -> RowOutcome:
    _, _, u_star = _dw_setup(cfg, ctx)
    eps, alpha = cfg.eps, cfg.alpha
    integral_sq = integrate_square(lambda t: eps * math.sin(alpha * t), cfg.T)
    exact = sine_perturbation_error(eps, alpha, cfg.T) if alpha != 0 else component_constant_error(0.0, 1, cfg.T)
    return _dw_row(cfg, ctx, plus(u_star, sine_in_time(eps, alpha)), integral_sq, exact)


def doublewell_sine_space_row(cfg: ExperimentConfig, ctx: RunContext) -> RowOutcome:
    _, _, u_star = _dw_setup(cfg, ctx)
    return _dw_row(cfg, ctx, plus(u_star, sine_in_space(cfg.eps, cfg.alpha)), state_dependent=True)


# ---------------------------------------------------------------- exit problem rows

def hitting_row(cfg: ExperimentConfig, ctx: RunContext) -> RowOutcome:
    stopping = StoppingSpec.first_exit(-cfg.a, cfg.a, cfg.time_cap)
    plain_key = ("hitting_plain", cfg.a, cfg.x0, cfg.dt, cfg.time_cap, cfg.k)
    if plain_key not in ctx.cache:
        ctx.cache[plain_key] = brownian_exit_simulate(0.0, stopping, cfg.dt, cfg.k, ctx.seed_for("hitting_plain"),
                                                      "zero", x0=cfg.x0, workers=ctx.workers)
    plain = ctx.cache[plain_key]
    direct = brownian_exit_simulate(cfg.eps, stopping, cfg.dt, cfg.k, ctx.seed_for("hitting_u"), "u",
                                    x0=cfg.x0, workers=ctx.workers)
    reflected_batch = brownian_exit_simulate(cfg.eps, stopping, cfg.dt, cfg.k, ctx.seed_for("hitting_reflected"),
                                             "2u_star_minus_u", x0=cfg.x0, workers=ctx.workers)
    est = importance_estimate(direct)
    reports = hitting_error(cfg.eps, reflected_batch, plain)
    bounds = {
        "hitting_exact": reports.exact.value,
        "hitting_exact_stderr": _stderr(reports.exact.stderr),
        "hitting_jensen": reports.jensen_lower.value,
        "hitting_naive": reports.naive_wrong.value,
        "hitting_naive_stderr": _stderr(reports.naive_wrong.stderr),
    }
    checks = {
        "chi2_identity": chi2_hat(direct) == est.rel_err_hat ** 2,
        "jensen_below_exact": reports.jensen_lower.value <= reports.exact.value + ORDER_SLACK,
    }
    return RowOutcome(est.rel_err_hat, _stderr(est.rel_err_stderr), bounds, est.flags, checks)


# ---------------------------------------------------------------- small noise rows

def _small_noise_grid(cfg: ExperimentConfig) -> Grid1D:
    return Grid1D(
        cfg.x_min if cfg.x_min is not None else SMALL_NOISE_GRID["x_min"],
        cfg.x_max if cfg.x_max is not None else SMALL_NOISE_GRID["x_max"],
        cfg.nx or SMALL_NOISE_GRID["nx"],
        cfg.nt or SMALL_NOISE_GRID["nt"],
        cfg.T,
    )


def smallnoise_row(cfg: ExperimentConfig, ctx: RunContext) -> RowOutcome:
    problem = SmallNoiseProblem(cfg.eta, cfg.alpha, cfg.T, cfg.x0)
    pde_grid = _small_noise_grid(cfg)
    solution = solve_hjb_smallnoise(cfg.eta, cfg.alpha, pde_grid)
    v0 = smallnoise_v0(cfg.alpha, cfg.T)

    u0 = problem.to_noise_units(v0.control)
    delta_small = minus(solution.derived_control, v0.control)
    batch = simulate_controlled(problem.model, u0, None, problem.g, make_time_grid(cfg.T, cfg.n_steps),
                                StoppingSpec.fixed_horizon(), cfg.k, cfg.seed, aux_field=delta_small,
                                workers=ctx.workers)
    est = importance_estimate(batch)
    h = solve_h_field(problem.model, u0, problem.to_noise_units(delta_small), pde_grid)
    bounds = {
        "pde_exact": h.relative_error_at(cfg.x0),
        "control_gap": control_gap(solution, v0, CONTROL_GAP_WINDOW),
        "l2_exp": exponentiated_l2_error(batch),
    }
    checks = {"chi2_identity": chi2_hat(batch) == est.rel_err_hat ** 2}
    return RowOutcome(est.rel_err_hat, _stderr(est.rel_err_stderr), bounds, est.flags, checks)


# ---------------------------------------------------------------- Gaussian rows

def gaussian_dim_row(cfg: ExperimentConfig, ctx: RunContext) -> RowOutcome:
    d = cfg.d
    sigma_sq = cfg.sigma ** 2
    cov = sigma_sq * np.eye(d)
    p = GaussianMeasure(np.zeros(d), cov)
    alpha = np.full(d, cfg.alpha)
    eps = np.full(d, cfg.eps)
    c = math.exp(sigma_sq * cfg.eps ** 2)
    log_w = gaussian_is_sample(p, alpha, eps, cfg.k, cfg.seed)
    est = estimate_log_weights(log_w, seed=cfg.seed)
    kl = gaussian_kl(optimal_gaussian_proposal(p, alpha), perturbed_gaussian_proposal(p, alpha, eps))
    exact = perturbed_gaussian_error(cov, eps)
    bounds = {
        "exact": exact,
        "kl_lower": kl_lower_bound(kl),
        # c = 1 is the optimal proposal itself
        "product_blowup": product_dimension_blowup(c, d) if c > 1.0 else 0.0,
    }
    return RowOutcome(est.rel_err_hat, _stderr(est.rel_err_stderr), bounds, est.flags)


# ---------------------------------------------------------------- registry

_CLOSED = ("exact", "kl_lower", "holder_upper")
_SAMPLED = ("kl_lower", "holder_upper", "holder_upper_stderr", "exact_mc", "exact_mc_stderr", "pde_exact")

REGISTRY: Dict[ExperimentName, ExperimentSpec] = {
    spec.name: spec for spec in [
        ExperimentSpec(ExperimentName.OU_PERTURBATION, BASE_COLUMNS + _CLOSED, ou_perturbation_row,
                       "OU with u = u* + eps, constant perturbation"),
        ExperimentSpec(ExperimentName.OU_WINDOWED, BASE_COLUMNS + _CLOSED, ou_windowed_row,
                       "OU with u = u* + eps on [0, s) only"),
        ExperimentSpec(ExperimentName.DOUBLEWELL_NAIVE, BASE_COLUMNS + _SAMPLED,
                       doublewell_naive_row, "double well sampled without control"),
        ExperimentSpec(ExperimentName.DOUBLEWELL_ADDITIVE, BASE_COLUMNS + _CLOSED + ("pde_exact",),
                       doublewell_additive_row, "double well with u = u* + eps"),
        ExperimentSpec(ExperimentName.DOUBLEWELL_MULTIPLICATIVE, BASE_COLUMNS + _SAMPLED,
                       doublewell_multiplicative_row, "double well with u = zeta u*"),
        ExperimentSpec(ExperimentName.DOUBLEWELL_SINE_TIME, BASE_COLUMNS + _CLOSED + ("pde_exact",),
                       doublewell_sine_time_row, "double well with u = u* + eps sin(alpha t)"),
        ExperimentSpec(ExperimentName.DOUBLEWELL_SINE_SPACE, BASE_COLUMNS + _SAMPLED,
                       doublewell_sine_space_row, "double well with u = u* + eps sin(alpha x)"),
        ExperimentSpec(ExperimentName.HITTING_SWEEP,
                       BASE_COLUMNS + ("hitting_exact", "hitting_exact_stderr", "hitting_jensen",
                                       "hitting_naive", "hitting_naive_stderr"),
                       hitting_row, "exit of sqrt(2) W from (-a, a) under u = u* + eps"),
        ExperimentSpec(ExperimentName.SMALLNOISE_ETA, BASE_COLUMNS + ("pde_exact", "control_gap", "l2_exp"),
                       smallnoise_row, "small-noise sampling with the zero-viscosity control, eta sweep"),
        ExperimentSpec(ExperimentName.SMALLNOISE_T, BASE_COLUMNS + ("pde_exact", "control_gap", "l2_exp"),
                       smallnoise_row, "small-noise sampling with the zero-viscosity control, T sweep"),
        ExperimentSpec(ExperimentName.GAUSSIAN_DIM_SWEEP, BASE_COLUMNS + ("exact", "kl_lower", "product_blowup"),
                       gaussian_dim_row, "shifted Gaussian proposal across dimensions"),
    ]
}


# ---------------------------------------------------------------- assertions

def _assert(name: str, passed: bool, detail: Optional[str] = None) -> AssertionResult:
    run_logger.log_assertion(name, bool(passed), detail)
    return AssertionResult(name=name, passed=bool(passed), detail=detail)


def _column(rows: Sequence[SweepRow], name: str) -> List[float]:
    return [row.bound_values[name] for row in rows]


def _nondecreasing(values: Sequence[float], slack: float = 1e-9) -> bool:
    return all(b >= a - slack * max(1.0, abs(a)) for a, b in zip(values, values[1:]))


def _sorted_by_sweep(rows: Sequence[SweepRow], reverse: bool = False) -> List[SweepRow]:
    return sorted(rows, key=lambda r: r.swept_value, reverse=reverse)


def summary_assertions(cfg: ExperimentConfig, rows: Sequence[SweepRow],
                       checks: Sequence[Dict[str, bool]]) -> List[AssertionResult]:
    results = []
    name = cfg.experiment
    columns = REGISTRY[name].columns

    for check in sorted({key for c in checks for key in c}):
        results.append(_assert(check, all(c.get(check, True) for c in checks)))

    if {"exact", "kl_lower", "holder_upper"} <= set(columns):
        ordered = all(
            r.bound_values["kl_lower"] <= r.bound_values["exact"] <= r.bound_values["holder_upper"]
            for r in rows
        )
        results.append(_assert("bound_ordering", ordered))
    elif {"exact", "kl_lower"} <= set(columns):
        results.append(_assert("bound_ordering", all(r.bound_values["kl_lower"] <= r.bound_values["exact"] for r in rows)))

    if "exact" in columns and name != ExperimentName.GAUSSIAN_DIM_SWEEP:
        worst = 0.0
        for r in rows:
            exact = r.bound_values["exact"]
            if exact > 0:
                worst = max(worst, abs(r.estimate - exact) / exact)
        results.append(_assert("tracks_exact_10pct", worst <= 0.10, f"worst relative deviation {worst:.4g}"))

    if name == ExperimentName.GAUSSIAN_DIM_SWEEP:
        agree = all(math.isclose(r.bound_values["product_blowup"], r.bound_values["exact"], rel_tol=1e-9, abs_tol=1e-12)
                    for r in rows)
        results.append(_assert("product_blowup_matches_exact", agree))

    if name == ExperimentName.DOUBLEWELL_NAIVE and cfg.sweep in ("kappa", "rho"):
        pde = _column(_sorted_by_sweep(rows), "pde_exact")
        results.append(_assert(f"pde_exact_nondecreasing_in_{cfg.sweep}", _nondecreasing(pde)))

    if name == ExperimentName.DOUBLEWELL_MULTIPLICATIVE and cfg.sweep == "zeta":
        at_one = [r for r in rows if math.isclose(r.swept_value, 1.0)]
        if at_one:
            best = min(rows, key=lambda r: r.estimate)
            results.append(_assert("minimum_at_zeta_1", math.isclose(best.swept_value, 1.0),
                                   f"argmin zeta = {best.swept_value:g}"))
            results.append(_assert("optimum_rel_err_below_0.05", at_one[0].estimate < 0.05,
                                   f"r(zeta=1) = {at_one[0].estimate:.4g}"))

    if name == ExperimentName.HITTING_SWEEP:
        worst = 0.0
        separated = True
        for r in rows:
            exact = r.bound_values["hitting_exact"]
            if exact > 0 and r.estimate > 0:
                worst = max(worst, abs(exact - r.estimate) / r.estimate)
            if r.swept_value >= 0.5:
                band = 4.0 * math.hypot(r.bound_values["hitting_exact_stderr"], r.bound_values["hitting_naive_stderr"])
                separated &= abs(r.bound_values["hitting_naive"] - exact) > band
        results.append(_assert("hitting_exact_within_15pct", worst <= 0.15, f"worst relative deviation {worst:.4g}"))
        results.append(_assert("naive_separated_above_0.5", separated))

    if name == ExperimentName.SMALLNOISE_ETA and cfg.sweep == "eta":
        gaps = _column(_sorted_by_sweep(rows, reverse=True), "control_gap")
        results.append(_assert("control_gap_decreasing_in_eta",
                               all(b < a for a, b in zip(gaps, gaps[1:]))))

    if name == ExperimentName.SMALLNOISE_T and cfg.sweep == "T":
        pde = _column(_sorted_by_sweep(rows), "pde_exact")
        results.append(_assert("pde_exact_nondecreasing_in_T", _nondecreasing(pde)))

    return results


# ---------------------------------------------------------------- config resolution

def parse_config_text(text: str) -> Dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment"""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'", {"line": lineno, "text": raw})
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key", {"line": lineno})
        values[key] = value
    return values


def load_config_file(path: str) -> Dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}", {"path": path})
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config file {path} is not UTF-8 text: byte {exc.start}", {"path": path, "byte": exc.start})


def parse_set_pairs(pairs: Sequence[str]) -> Dict[str, str]:
    values = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got '{pair}'")
        key, value = pair.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def build_config(experiment: str, file_values: Optional[Dict[str, Any]] = None,
                 flags: Optional[Dict[str, Any]] = None,
                 overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Resolve defaults < config file < CLI flags < --set overrides into an ExperimentConfig.

    ``full`` switches the default sample count to FULL_K unless k is
    given explicitly.
    """
    if experiment not in EXPERIMENT_DEFAULTS:
        raise ConfigError(f"unknown experiment '{experiment}'",
                          {"known": sorted(EXPERIMENT_DEFAULTS)})
    merged: Dict[str, Any] = {"experiment": experiment}
    merged.update(EXPERIMENT_DEFAULTS[experiment])
    explicit_k = False
    for layer in (file_values or {}, flags or {}, overrides or {}):
        for key, value in layer.items():
            if value is None:
                continue
            if key == "experiment" and value != experiment:
                raise ConfigError(f"config names experiment '{value}' but '{experiment}' was requested")
            merged[key] = value
            explicit_k |= key == "k"
    if str(merged.get("full", "false")).lower() in ("1", "true", "yes", "on") and not explicit_k:
        merged["k"] = FULL_K
    merged.setdefault("k", DEFAULT_K)
    try:
        return ExperimentConfig(**merged)
    except ValidationError as exc:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in exc.errors())
        raise ConfigError(f"invalid configuration: {problems}", {"errors": json.loads(exc.json())})


def config_digest(cfg: ExperimentConfig) -> str:
    payload = json.dumps(cfg.digest_fields(), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------- running

def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every sweep value of ``config`` in order and evaluate the summary assertions"""
    spec = REGISTRY[config.experiment]
    ctx = RunContext(config)
    run_logger.new_run()
    run_logger.log_experiment_start(config.experiment.value, config.digest_fields())
    started = time.perf_counter()

    rows: List[SweepRow] = []
    checks: List[Dict[str, bool]] = []
    for value in config.sweep_values:
        row_cfg = config.at(value)
        t0 = time.perf_counter()
        try:
            outcome = spec.row(row_cfg, ctx)
        except PathweightError as exc:
            exc.details.setdefault("experiment", config.experiment.value)
            exc.details.setdefault(config.sweep, value)
            raise
        wall_ms = int(round((time.perf_counter() - t0) * 1000))
        missing = [c for c in spec.columns[len(BASE_COLUMNS):] if c not in outcome.bounds]
        if missing:
            raise RuntimeError(f"{spec.name.value} row lacks columns {missing}")
        row = SweepRow(swept_value=float(value), estimate=outcome.estimate, stderr=outcome.stderr,
                       bound_values=outcome.bounds, wall_time_ms=wall_ms, flags=outcome.flags)
        run_logger.log_sweep_row(config.experiment.value, row.swept_value, row.estimate, row.stderr,
                                 wall_ms, row.flags)
        rows.append(row)
        checks.append(outcome.checks)

    assertions = summary_assertions(config, rows, checks)
    runtime_ms = int(round((time.perf_counter() - started) * 1000))
    summary = RunSummary(
        experiment=config.experiment.value,
        config=config.digest_fields(),
        config_digest=config_digest(config),
        seed=config.seed,
        sub_seeds=ctx.sub_seeds,
        runtime_ms=runtime_ms,
        row_wall_times_ms=[r.wall_time_ms for r in rows],
        block_size=BLOCK_SIZE,
        workers=config.workers,
        assertions=assertions,
        flags=sorted({flag for r in rows for flag in r.flags}),
    )
    return ExperimentResult(rows, summary, spec.columns)


def format_float(value: float) -> str:
    return format(float(value), ".17g")


def csv_rows(result: ExperimentResult) -> List[List[str]]:
    out = [list(result.columns)]
    for row in result.rows:
        values = [row.swept_value, row.estimate, row.stderr]
        values += [row.bound_values[c] for c in result.columns[len(BASE_COLUMNS):]]
        out.append([format_float(v) for v in values])
    return out


def output_paths(config: ExperimentConfig) -> Tuple[str, str]:
    target = config.output_path
    if target.endswith(".csv"):
        return target, target[:-4] + ".json"
    return (os.path.join(target, f"{config.experiment.value}.csv"),
            os.path.join(target, f"{config.experiment.value}.json"))


def write_outputs(config: ExperimentConfig, result: ExperimentResult) -> Tuple[str, str]:
    csv_path, json_path = output_paths(config)
    try:
        directory = os.path.dirname(csv_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(csv_rows(result))
        with open(json_path, "w", encoding="utf-8") as fh:
            fh.write(result.summary.model_dump_json(indent=2))
            fh.write("\n")
    except OSError as exc:
        raise ConfigError(f"cannot write outputs to {config.output_path}: {exc.strerror}",
                          {"path": config.output_path})
    run_logger.log_experiment_end(config.experiment.value, result.summary.runtime_ms, [csv_path, json_path])
    return csv_path, json_path
