import os
from dotenv import load_dotenv

load_dotenv()

# Process-level knobs
DEFAULT_SEED = int(os.getenv("PATHWEIGHT_SEED", "42"))
DEFAULT_K = int(os.getenv("PATHWEIGHT_K", "100000"))
FULL_K = int(os.getenv("PATHWEIGHT_FULL_K", "1000000"))
WORKERS = int(os.getenv("PATHWEIGHT_WORKERS", "1"))
# Paths per RNG substream block. Part of the reproducibility contract: changing it
# changes the sampled numbers, changing WORKERS does not.
BLOCK_SIZE = int(os.getenv("PATHWEIGHT_BLOCK_SIZE", "8192"))
BOOTSTRAP_RESAMPLES = int(os.getenv("PATHWEIGHT_BOOTSTRAP", "200"))
OUTPUT_DIR = os.getenv("PATHWEIGHT_OUTPUT_DIR", "./results")
LOG_DIR = os.getenv("PATHWEIGHT_LOG_DIR")
LOG_LEVEL = os.getenv("PATHWEIGHT_LOG_LEVEL", "INFO")

# Numeric constants
ESS_WARNING_THRESHOLD = 100
HITTING_DT = 1e-4
HITTING_TIME_CAP = 100.0
H_FIELD_TOLERANCE = 1e-6
SPD_SYMMETRY_TOLERANCE = 1e-12
NORMALIZATION_TOLERANCE = 1e-10
DIVERGENCE_GROWTH_FACTOR = 10.0
MAX_HURWITZ_RESAMPLES = 100

# Small-noise control gap is measured on this x-window at t = 0
CONTROL_GAP_WINDOW = (0.05, 1.0)

# PDE grids
DOUBLE_WELL_GRID = {"x_min": -3.0, "x_max": 3.0, "nx": 601, "nt": 1000}
SMALL_NOISE_GRID = {"x_min": -2.0, "x_max": 3.0, "nx": 2501, "nt": 2000}
EXIT_GRID_NODES = 2001

# Sweep defaults per experiment. Every key is an ExperimentConfig field name.
EXPERIMENT_DEFAULTS = {
    "ou_perturbation": {
        "sweep": "eps", "sweep_values": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
        "d": 1, "T": 1.0, "eps": 0.1, "n_steps": 1000,
    },
    "ou_windowed": {
        "sweep": "eps", "sweep_values": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
        "d": 1, "T": 1.0, "eps": 0.1, "s": 0.2, "n_steps": 1000,
    },
    "doublewell_naive": {
        "sweep": "kappa", "sweep_values": [0.5, 1.0, 2.0, 3.0],
        "kappa": 1.0, "rho": 1.0, "B": 1.0, "T": 1.0, "x0": -1.0, "n_steps": 1000,
    },
    "doublewell_additive": {
        "sweep": "eps", "sweep_values": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
        "kappa": 1.0, "rho": 1.0, "B": 1.0, "T": 1.0, "x0": -1.0, "eps": 0.1, "n_steps": 1000,
    },
    "doublewell_multiplicative": {
        "sweep": "zeta", "sweep_values": [0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4],
        "kappa": 1.0, "rho": 1.0, "B": 1.0, "T": 1.0, "x0": -1.0, "zeta": 1.0, "n_steps": 1000,
    },
    "doublewell_sine_time": {
        "sweep": "eps", "sweep_values": [0.25, 0.5, 1.0],
        "kappa": 1.0, "rho": 1.0, "B": 1.0, "T": 1.0, "x0": -1.0, "alpha": 50.0,
        "eps": 0.25, "n_steps": 1000,
    },
    "doublewell_sine_space": {
        "sweep": "eps", "sweep_values": [0.25, 0.5, 1.0],
        "kappa": 1.0, "rho": 1.0, "B": 1.0, "T": 1.0, "x0": -1.0, "alpha": 50.0,
        "eps": 0.25, "n_steps": 1000,
    },
    "hitting_sweep": {
        "sweep": "eps", "sweep_values": [0.25, 0.5, 0.75],
        "a": 1.0, "x0": 0.0, "eps": 0.25, "dt": HITTING_DT, "time_cap": HITTING_TIME_CAP,
        "k": 10000,
    },
    "smallnoise_eta": {
        "sweep": "eta", "sweep_values": [0.5, 0.1, 0.05, 0.01],
        "eta": 0.1, "alpha": 1.0, "T": 1.0, "x0": 0.1, "n_steps": 1000,
    },
    "smallnoise_T": {
        "sweep": "T", "sweep_values": [0.5, 1.0, 2.0, 4.0],
        "eta": 0.005, "alpha": 1.0, "T": 1.0, "x0": 0.1, "n_steps": 1000,
    },
    "gaussian_dim_sweep": {
        "sweep": "d", "sweep_values": [1, 2, 4, 8, 16],
        "d": 1, "sigma": 1.0, "eps": 0.3, "alpha": 1.0,
    },
}
