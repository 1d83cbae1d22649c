from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Optional, Dict, List, Any
from enum import Enum

# Enums for type safety
class ExperimentName(str, Enum):
    """Registry of runnable experiments"""
    OU_PERTURBATION = "ou_perturbation"
    OU_WINDOWED = "ou_windowed"
    DOUBLEWELL_NAIVE = "doublewell_naive"
    DOUBLEWELL_ADDITIVE = "doublewell_additive"
    DOUBLEWELL_MULTIPLICATIVE = "doublewell_multiplicative"
    DOUBLEWELL_SINE_TIME = "doublewell_sine_time"
    DOUBLEWELL_SINE_SPACE = "doublewell_sine_space"
    HITTING_SWEEP = "hitting_sweep"
    SMALLNOISE_ETA = "smallnoise_eta"
    SMALLNOISE_T = "smallnoise_T"
    GAUSSIAN_DIM_SWEEP = "gaussian_dim_sweep"

class BoundKind(str, Enum):
    """Kinds of relative-error values a BoundReport can carry"""
    EXACT_CLOSED_FORM = "exact_closed_form"
    EXACT_MC_FORM1 = "exact_mc_form1"
    EXACT_MC_FORM2 = "exact_mc_form2"
    LOWER_KL = "lower_kl"
    LOWER_H1 = "lower_h1"
    UPPER_H2 = "upper_h2"
    UPPER_HOLDER = "upper_holder"
    HITTING_EXACT = "hitting_exact"
    HITTING_JENSEN = "hitting_jensen"
    HITTING_NAIVE = "hitting_naive"

    @property
    def is_monte_carlo(self) -> bool:
        return self in MC_BOUND_KINDS

MC_BOUND_KINDS = frozenset({
    BoundKind.EXACT_MC_FORM1,
    BoundKind.EXACT_MC_FORM2,
    BoundKind.UPPER_HOLDER,
    BoundKind.HITTING_EXACT,
    BoundKind.HITTING_JENSEN,
    BoundKind.HITTING_NAIVE,
})

class PdeKind(str, Enum):
    PSI = "psi"
    VALUE_V = "value_V"
    SECOND_MOMENT = "second_moment"
    H_FIELD = "h_field"

class Provenance(str, Enum):
    """Where a control field came from"""
    ZERO = "zero"
    ANALYTIC = "analytic"
    PDE_DERIVED = "pde_derived"
    COMPOSED = "composed"

class StoppingMode(str, Enum):
    FIXED_HORIZON = "fixed_horizon"
    FIRST_EXIT = "first_exit"

class ExactForm(str, Enum):
    """Which expectation the exact path-space formula is sampled under"""
    UNDER_U = "under_u"
    UNDER_U_PLUS_2DELTA = "under_u_plus_2delta"

# Parameters each experiment needs on top of the common ones
REQUIRED_PARAMETERS: Dict[ExperimentName, List[str]] = {
    ExperimentName.OU_PERTURBATION: ["d", "T", "eps", "n_steps"],
    ExperimentName.OU_WINDOWED: ["d", "T", "eps", "s", "n_steps"],
    ExperimentName.DOUBLEWELL_NAIVE: ["kappa", "rho", "B", "T", "x0", "n_steps"],
    ExperimentName.DOUBLEWELL_ADDITIVE: ["kappa", "rho", "B", "T", "x0", "eps", "n_steps"],
    ExperimentName.DOUBLEWELL_MULTIPLICATIVE: ["kappa", "rho", "B", "T", "x0", "zeta", "n_steps"],
    ExperimentName.DOUBLEWELL_SINE_TIME: ["kappa", "rho", "B", "T", "x0", "eps", "alpha", "n_steps"],
    ExperimentName.DOUBLEWELL_SINE_SPACE: ["kappa", "rho", "B", "T", "x0", "eps", "alpha", "n_steps"],
    ExperimentName.HITTING_SWEEP: ["a", "x0", "eps", "dt", "time_cap"],
    ExperimentName.SMALLNOISE_ETA: ["eta", "alpha", "T", "x0", "n_steps"],
    ExperimentName.SMALLNOISE_T: ["eta", "alpha", "T", "x0", "n_steps"],
    ExperimentName.GAUSSIAN_DIM_SWEEP: ["d", "sigma", "eps", "alpha"],
}

SWEEPABLE = ("d", "T", "kappa", "rho", "alpha", "eta", "eps", "zeta", "a", "s", "B", "sigma")

# Config Models
class ExperimentConfig(BaseModel):
    """Fully resolved configuration of one experiment run"""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    experiment: ExperimentName = Field(..., description="Registry name")
    seed: int = Field(42, ge=0, lt=2**64, description="Root seed of every random stream")
    k: int = Field(100000, description="Paths per sweep value")
    n_steps: Optional[int] = Field(None, ge=1, description="Euler steps on [0, T]")
    sweep: str = Field(..., description="Name of the swept parameter")
    sweep_values: List[float] = Field(..., min_length=1)

    d: Optional[int] = Field(None, ge=1)
    T: Optional[float] = Field(None, gt=0)
    kappa: Optional[float] = Field(None, gt=0)
    rho: Optional[float] = Field(None, gt=0)
    alpha: Optional[float] = None
    eta: Optional[float] = Field(None, gt=0)
    eps: Optional[float] = None
    zeta: Optional[float] = None
    a: Optional[float] = Field(None, gt=0)
    s: Optional[float] = Field(None, gt=0)
    B: Optional[float] = Field(None, gt=0)
    sigma: Optional[float] = Field(None, gt=0)
    x0: Optional[float] = None
    dt: Optional[float] = Field(None, gt=0)
    time_cap: Optional[float] = Field(None, gt=0)

    nx: Optional[int] = Field(None, ge=3)
    nt: Optional[int] = Field(None, ge=1)
    x_min: Optional[float] = None
    x_max: Optional[float] = None

    workers: int = Field(1, ge=1)
    full: bool = False
    output_path: str = "./results"

    @field_validator("k")
    @classmethod
    def validate_k(cls, v):
        if v < 1:
            raise ValueError("k must be at least 1")
        return v

    @field_validator("sweep_values", mode="before")
    @classmethod
    def parse_sweep_values(cls, v):
        if isinstance(v, str):
            parts = [p.strip() for p in v.split(",") if p.strip()]
            if not parts:
                raise ValueError("sweep_values is empty")
            return [float(p) for p in parts]
        return v

    @field_validator("sweep")
    @classmethod
    def validate_sweep(cls, v):
        if v not in SWEEPABLE:
            raise ValueError(f"cannot sweep over '{v}'; choose one of {', '.join(SWEEPABLE)}")
        return v

    @model_validator(mode="after")
    def check_required(self):
        missing = [name for name in REQUIRED_PARAMETERS[self.experiment] if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.experiment.value} requires {', '.join(missing)}")
        if self.x_min is not None and self.x_max is not None and self.x_min >= self.x_max:
            raise ValueError("x_min must be below x_max")
        return self

    def at(self, value: float) -> "ExperimentConfig":
        """Copy of this config with the swept parameter set to ``value``"""
        if self.sweep in ("d",):
            value = int(round(value))
        return self.model_copy(update={self.sweep: value})

    def digest_fields(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude={"output_path", "workers"})

# Result Models
class SweepRow(BaseModel):
    """One CSV row: sampled relative error plus every applicable formula or bound"""
    swept_value: float
    estimate: float
    stderr: float
    bound_values: Dict[str, float] = Field(default_factory=dict)
    wall_time_ms: int = Field(0, ge=0)
    flags: List[str] = Field(default_factory=list)

    @field_validator("stderr")
    @classmethod
    def validate_stderr(cls, v):
        if v < 0:
            raise ValueError("stderr must be nonnegative")
        return v

class AssertionResult(BaseModel):
    name: str
    passed: bool
    detail: Optional[str] = None

class RunSummary(BaseModel):
    """JSON summary written next to the CSV"""
    experiment: str
    config: Dict[str, Any]
    config_digest: str
    seed: int
    sub_seeds: Dict[str, Any] = Field(default_factory=dict)
    runtime_ms: int
    row_wall_times_ms: List[int]
    block_size: int
    workers: int
    assertions: List[AssertionResult]
    flags: List[str] = Field(default_factory=list)
