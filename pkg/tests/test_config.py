import glob
import os

import pytest

from peterlin_hdg.config import (
    EXPERIMENT_DEFAULTS,
    RunConfig,
    build_config,
    default_beta,
    default_config,
    load_config,
    parse_config,
)
from peterlin_hdg.exceptions import ConfigError


def test_example1_defaults():
    config = default_config("example1")
    assert config.study == "spatial"
    assert config.steps == 820
    assert config.mesh_levels == [2, 3, 4]
    assert (config.nu, config.alpha, config.beta) == (1.0, 8.0, 10.0)
    assert config.tau == pytest.approx(0.2 / 820)
    assert config.flow_case == "example1"


@pytest.mark.parametrize("epsilon,expected", [(1.0, 10.0), (1e-3, 300.0), (0.0, 10.0)])
def test_example1_penalty_follows_diffusion(epsilon, expected):
    assert default_beta("example1", epsilon) == expected
    assert default_config("example1", epsilon=epsilon).beta == expected


def test_explicit_beta_wins():
    assert default_config("example1", epsilon=1e-3, beta=50.0).beta == 50.0


def test_example2_defaults():
    config = default_config("example2")
    assert (config.epsilon, config.nu, config.alpha, config.beta) == (1e-4, 1e-2, 600.0, 600.0)
    assert config.final_time == 1.0
    assert config.dump_times == [1.0]


def test_custom_runs_zero_case_by_default():
    config = default_config("custom")
    assert config.flow_case == "zero"
    assert default_config("custom", case="example1").flow_case == "example1"


def test_overrides_skip_none():
    config = build_config({"experiment": "example1", "steps": 40}, {"steps": None, "threads": 4})
    assert config.steps == 40
    assert config.threads == 4


def test_unknown_keys_are_listed():
    with pytest.raises(ConfigError) as excinfo:
        parse_config('experiment = "example1"\nmesh_size = 3\n[toggles]\nplots = true\n')
    assert "mesh_size" in str(excinfo.value)
    assert set(excinfo.value.fields) == {"mesh_size", "toggles.plots"}


def test_runs_take_no_seed():
    assert "seed" not in RunConfig.model_fields
    with pytest.raises(ConfigError) as excinfo:
        parse_config('experiment = "custom"\nseed = 7\n')
    assert excinfo.value.fields == ["seed"]


def test_unknown_experiment():
    with pytest.raises(ConfigError) as excinfo:
        build_config({"experiment": "example3"})
    assert excinfo.value.fields == ["experiment"]


@pytest.mark.parametrize(
    "overrides,field",
    [
        ({"nu": 0.0}, "nu"),
        ({"epsilon": -1.0}, "epsilon"),
        ({"steps": 819.2}, "steps"),
        ({"degree": 3}, "degree"),
        ({"mesh_level": 11}, "mesh_level"),
        ({"threads": 0}, "threads"),
    ],
)
def test_invalid_values_name_the_field(overrides, field):
    with pytest.raises(ConfigError) as excinfo:
        default_config("example1", **overrides)
    assert field in excinfo.value.fields


@pytest.mark.parametrize(
    "overrides",
    [
        {"dump_times": [0.5]},
        {"mesh_levels": [2, 12]},
        {"step_counts": [10, 0]},
        {"case": "zero"},
    ],
)
def test_inconsistent_documents(overrides):
    with pytest.raises(ConfigError):
        default_config("example1", **overrides)


def test_malformed_toml():
    with pytest.raises(ConfigError, match="Malformed"):
        parse_config("experiment = [unclosed")


def test_solver_section():
    config = parse_config('experiment = "custom"\n[solver]\nblowup_bound = 1e3\nregularization = 0.0\n')
    assert config.solver.blowup_bound == 1e3
    assert config.solver.regularization == 0.0
    assert config.toggles.spd_diagnostics


def test_every_shipped_config_loads(config_dir):
    paths = sorted(glob.glob(os.path.join(config_dir, "*.toml")))
    assert len(paths) >= 6
    for path in paths:
        assert isinstance(load_config(path), RunConfig)


def test_shipped_small_diffusion_config(config_dir):
    config = load_config(os.path.join(config_dir, "example1_eps1e-3.toml"), {"output_dir": "elsewhere"})
    assert config.beta == 300.0
    assert config.output_dir == "elsewhere"


def test_every_experiment_has_defaults():
    for experiment in EXPERIMENT_DEFAULTS:
        assert default_config(experiment).experiment == experiment
