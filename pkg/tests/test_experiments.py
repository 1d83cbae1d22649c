import sys
import os
import json
import pytest
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from config import DEFAULT_K, FULL_K
from models import ExperimentName
from utils.errors import ConfigError
from utils.experiments import (
    REGISTRY,
    build_config,
    config_digest,
    csv_rows,
    format_float,
    output_paths,
    parse_config_text,
    parse_set_pairs,
    run_experiment,
    write_outputs,
)


def passed(result, name):
    matches = [a for a in result.summary.assertions if a.name == name]
    assert matches, f"assertion {name} was not evaluated"
    return matches[0].passed


def test_registry_covers_every_experiment():
    assert set(REGISTRY) == set(ExperimentName)
    for spec in REGISTRY.values():
        assert spec.columns[:3] == ("swept_value", "estimate", "stderr")


def test_parse_config_text():
    text = """
    # OU run
    k = 500        # small
    sweep_values = 0, 0.1
    """
    assert parse_config_text(text) == {"k": "500", "sweep_values": "0, 0.1"}


def test_parse_config_text_rejects_bad_line():
    with pytest.raises(ConfigError) as info:
        parse_config_text("k = 5\nnot a pair\n")
    assert info.value.details["line"] == 2


def test_parse_set_pairs():
    assert parse_set_pairs(["k=10", "eps = 0.2"]) == {"k": "10", "eps": "0.2"}
    with pytest.raises(ConfigError):
        parse_set_pairs(["k"])


def test_unknown_experiment():
    with pytest.raises(ConfigError) as info:
        build_config("no_such_thing")
    assert "unknown experiment 'no_such_thing'" in info.value.message


def test_config_layers_apply_in_order():
    cfg = build_config("ou_perturbation", {"k": "100", "eps": "0.3", "seed": "1"}, {"seed": 2, "k": None},
                       {"seed": "3"})
    assert cfg.k == 100
    assert cfg.eps == 0.3
    assert cfg.seed == 3
    assert cfg.sweep_values == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    assert build_config("ou_perturbation").k == DEFAULT_K


def test_full_sets_large_k_unless_given():
    assert build_config("ou_perturbation", flags={"full": True}).k == FULL_K
    assert build_config("ou_perturbation", flags={"full": True, "k": 7}).k == 7
    # experiment defaults do not count as an explicit k
    assert build_config("hitting_sweep", flags={"full": True}).k == FULL_K


def test_invalid_values_become_config_errors():
    with pytest.raises(ConfigError):
        build_config("ou_perturbation", overrides={"colour": "blue"})
    with pytest.raises(ConfigError):
        build_config("ou_perturbation", overrides={"k": "0"})
    with pytest.raises(ConfigError):
        build_config("ou_perturbation", overrides={"sweep": "n_steps"})
    with pytest.raises(ConfigError):
        build_config("ou_perturbation", {"experiment": "hitting_sweep"})


def test_digest_ignores_output_and_workers():
    a = build_config("ou_perturbation", flags={"output_path": "/tmp/a", "workers": 1})
    b = build_config("ou_perturbation", flags={"output_path": "/tmp/b", "workers": 4})
    c = build_config("ou_perturbation", flags={"seed": 7})
    assert config_digest(a) == config_digest(b)
    assert config_digest(a) != config_digest(c)


def test_output_paths():
    cfg = build_config("ou_perturbation", flags={"output_path": "out/run.csv"})
    assert output_paths(cfg) == ("out/run.csv", "out/run.json")
    cfg = build_config("ou_perturbation", flags={"output_path": "out"})
    assert output_paths(cfg) == (os.path.join("out", "ou_perturbation.csv"),
                                 os.path.join("out", "ou_perturbation.json"))


def test_format_float_round_trips():
    assert float(format_float(0.1)) == 0.1
    assert format_float(0.0) == "0"


small_ou = {"k": 2000, "n_steps": 100, "sweep_values": "0,0.2"}


def test_ou_perturbation_run():
    result = run_experiment(build_config("ou_perturbation", overrides=small_ou))
    assert [r.swept_value for r in result.rows] == [0.0, 0.2]
    assert set(result.rows[1].bound_values) == {"exact", "kl_lower", "holder_upper"}
    assert result.rows[0].bound_values["exact"] == 0.0
    assert passed(result, "bound_ordering")
    assert passed(result, "chi2_identity")
    assert "ou_matrices_d1" in result.summary.sub_seeds
    assert len(result.summary.row_wall_times_ms) == 2


def test_csv_is_independent_of_worker_count():
    a = run_experiment(build_config("ou_perturbation", flags={"workers": 1}, overrides=small_ou))
    b = run_experiment(build_config("ou_perturbation", flags={"workers": 2}, overrides=small_ou))
    assert csv_rows(a) == csv_rows(b)
    assert a.summary.config_digest == b.summary.config_digest


def test_write_outputs(tmp_path):
    cfg = build_config("ou_perturbation", flags={"output_path": str(tmp_path / "results")}, overrides=small_ou)
    result = run_experiment(cfg)
    csv_path, json_path = write_outputs(cfg, result)
    lines = open(csv_path).read().splitlines()
    assert lines[0] == "swept_value,estimate,stderr,exact,kl_lower,holder_upper"
    assert len(lines) == 3
    summary = json.load(open(json_path))
    assert summary["experiment"] == "ou_perturbation"
    assert summary["seed"] == 42
    assert "ou_matrices_d1" in summary["sub_seeds"]
    assert "output_path" not in summary["config"]


def test_gaussian_dimension_sweep():
    cfg = build_config("gaussian_dim_sweep", overrides={"k": 5000, "sweep_values": "1,4"})
    result = run_experiment(cfg)
    assert [r.swept_value for r in result.rows] == [1.0, 4.0]
    assert passed(result, "product_blowup_matches_exact")
    assert passed(result, "bound_ordering")
    assert result.rows[1].bound_values["exact"] > result.rows[0].bound_values["exact"]


def test_hitting_sweep_small():
    cfg = build_config("hitting_sweep", overrides={"k": 500, "dt": 1e-3, "sweep_values": "0.5"})
    result = run_experiment(cfg)
    row = result.rows[0]
    assert passed(result, "jensen_below_exact")
    assert row.bound_values["hitting_exact_stderr"] > 0
    assert {"hitting_plain", "hitting_u", "hitting_reflected"} <= set(result.summary.sub_seeds)


def test_doublewell_multiplicative_small():
    cfg = build_config("doublewell_multiplicative",
                       overrides={"k": 500, "n_steps": 100, "nx": 201, "nt": 200, "sweep_values": "0.8,1.0"})
    result = run_experiment(cfg)
    at_one = result.rows[1]
    assert at_one.bound_values["pde_exact"] < 1e-6
    assert at_one.bound_values["kl_lower"] == 0.0
    assert result.rows[0].bound_values["pde_exact"] > at_one.bound_values["pde_exact"]
    assert passed(result, "minimum_at_zeta_1")
    assert "path_kl" in result.summary.sub_seeds


def test_doublewell_multiplicative_sampled_columns():
    cfg = build_config("doublewell_multiplicative",
                       overrides={"k": 500, "n_steps": 100, "nx": 201, "nt": 200, "sweep_values": "0.8,1.0"})
    result = run_experiment(cfg)
    at_zeta = result.rows[0].bound_values
    at_one = result.rows[1].bound_values
    assert at_one["exact_mc"] == 0.0
    assert at_one["holder_upper"] == 0.0
    assert at_zeta["holder_upper"] >= at_zeta["exact_mc"]
    assert at_zeta["exact_mc"] == pytest.approx(at_zeta["pde_exact"], rel=0.15)
    assert at_zeta["exact_mc_stderr"] > 0
    assert {"holder", "exact_mc"} <= set(result.summary.sub_seeds)


small_naive = {"k": 200, "n_steps": 100, "nx": 301, "nt": 400}


def test_doublewell_naive_grows_with_barrier():
    cfg = build_config("doublewell_naive", overrides=dict(small_naive, sweep_values="0.5,1,2,3"))
    result = run_experiment(cfg)
    assert passed(result, "pde_exact_nondecreasing_in_kappa")
    assert {"holder_upper", "exact_mc"} <= set(result.rows[0].bound_values)


def test_doublewell_naive_grows_with_terminal_weight():
    cfg = build_config("doublewell_naive", overrides=dict(small_naive, sweep="rho", sweep_values="0.5,1,2,4"))
    result = run_experiment(cfg)
    assert passed(result, "pde_exact_nondecreasing_in_rho")


@pytest.mark.slow
def test_smallnoise_error_grows_with_horizon():
    cfg = build_config("smallnoise_T", overrides={"k": 500})
    result = run_experiment(cfg)
    assert passed(result, "pde_exact_nondecreasing_in_T")


@pytest.mark.slow
def test_smallnoise_control_gap_shrinks():
    cfg = build_config("smallnoise_eta",
                       overrides={"k": 1000, "n_steps": 100, "nx": 501, "nt": 200, "sweep_values": "0.5,0.1"})
    result = run_experiment(cfg)
    assert passed(result, "control_gap_decreasing_in_eta")
    for row in result.rows:
        assert row.bound_values["l2_exp"] >= 1.0
        assert row.bound_values["pde_exact"] >= 0.0
