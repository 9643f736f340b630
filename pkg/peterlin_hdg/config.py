"""
Run configuration.

Documents are TOML:

    experiment = "example1"
    study = "spatial"
    epsilon = 1e-3
    mesh_levels = [2, 3, 4]

    [toggles]
    store_fields = true

    [solver]
    blowup_bound = 1e6

Keys missing from the document are filled from the experiment's defaults
before validation, so a document only needs to name what it changes.
"""

import logging
from typing import List, Literal, Optional

import toml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

EXPERIMENT_DEFAULTS = {
    "example1": {
        "study": "spatial",
        "epsilon": 1.0,
        "nu": 1.0,
        "alpha": 8.0,
        "final_time": 0.2,
        "degree": 1,
        "mesh_levels": [2, 3, 4],
        "mesh_level": 5,
        "steps": 820,
        "step_counts": [10, 20, 40, 80],
    },
    "example2": {
        "study": "single",
        "epsilon": 1e-4,
        "nu": 1e-2,
        "alpha": 600.0,
        "beta": 600.0,
        "final_time": 1.0,
        "degree": 1,
        "mesh_level": 6,
        "steps": 100,
        "dump_times": [1.0],
    },
    "custom": {
        "study": "single",
        "case": "zero",
        "epsilon": 1.0,
        "nu": 1.0,
        "alpha": 8.0,
        "beta": 10.0,
        "final_time": 0.2,
        "degree": 1,
        "mesh_level": 3,
        "steps": 10,
    },
}


def default_beta(experiment, epsilon):
    """Conformation penalty of the first experiment: larger for small positive diffusion."""
    if experiment == "example1":
        return 300.0 if 0.0 < epsilon < 1.0 else 10.0
    return EXPERIMENT_DEFAULTS[experiment].get("beta", 10.0)


class Toggles(BaseModel):
    model_config = ConfigDict(extra="forbid")

    store_fields: bool = False
    spd_diagnostics: bool = True
    energy_monitor: bool = True
    static_condensation: bool = False


class SolverSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    blowup_bound: float = Field(1e6, gt=0)
    regularization: float = Field(1e-12, ge=0)
    residual_rtol: float = Field(1e-10, gt=0)
    residual_atol: float = Field(1e-12, gt=0)


class RunConfig(BaseModel):
    """Validated parameters of one study."""

    model_config = ConfigDict(extra="forbid")

    experiment: Literal["example1", "example2", "custom"] = "example1"
    study: Literal["single", "spatial", "temporal"] = "single"
    case: Optional[Literal["example1", "example2", "zero"]] = None

    epsilon: float = Field(ge=0)
    nu: float = Field(gt=0)
    alpha: float = Field(gt=0)
    beta: float = Field(gt=0)
    degree: Literal[1, 2] = 1

    final_time: float = Field(gt=0)
    steps: int = Field(gt=0)
    mesh_level: int = Field(ge=0, le=10)
    mesh_levels: List[int] = Field(default_factory=lambda: [2, 3, 4], min_length=1)
    step_counts: List[int] = Field(default_factory=lambda: [10, 20, 40, 80], min_length=1)

    output_dir: str = "results"
    dump_times: List[float] = Field(default_factory=list)
    threads: int = Field(1, ge=1)

    toggles: Toggles = Field(default_factory=Toggles)
    solver: SolverSettings = Field(default_factory=SolverSettings)

    @model_validator(mode="after")
    def check_consistency(self):
        if any(level < 0 or level > 10 for level in self.mesh_levels):
            raise ValueError("mesh_levels must lie in 0..10")
        if any(n <= 0 for n in self.step_counts):
            raise ValueError("step_counts must be positive integers")
        if any(t < 0 or t > self.final_time for t in self.dump_times):
            raise ValueError("dump_times must lie in [0, final_time]")
        if self.experiment != "custom" and self.case not in (None, self.experiment):
            raise ValueError("case can only be chosen for experiment 'custom'")
        return self

    @property
    def tau(self):
        return self.final_time / self.steps

    @property
    def flow_case(self):
        return self.case if self.experiment == "custom" else self.experiment


def _with_defaults(data):
    experiment = data.get("experiment", "example1")
    if experiment not in EXPERIMENT_DEFAULTS:
        raise ConfigError(
            f"Unknown experiment '{experiment}' (expected one of {sorted(EXPERIMENT_DEFAULTS)})",
            fields=["experiment"],
        )
    merged = {**EXPERIMENT_DEFAULTS[experiment], **data, "experiment": experiment}
    if "beta" not in merged:
        merged["beta"] = default_beta(experiment, float(merged["epsilon"]))
    return merged


def build_config(data, overrides=None):
    """Validate a plain mapping (plus CLI overrides) into a RunConfig."""
    data = dict(data)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    merged = _with_defaults(data)
    try:
        return RunConfig(**merged)
    except ValidationError as e:
        unknown = [".".join(str(p) for p in err["loc"]) for err in e.errors() if err["type"] == "extra_forbidden"]
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}", fields=unknown) from e
        fields = [".".join(str(p) for p in err["loc"]) or "config" for err in e.errors()]
        details = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid configuration: {details}", fields=fields) from e


def parse_config(text, overrides=None):
    """Parse a TOML document into a RunConfig."""
    try:
        data = toml.loads(text)
    except toml.TomlDecodeError as e:
        raise ConfigError(f"Malformed configuration document: {e}") from e
    return build_config(data, overrides)


def load_config(path, overrides=None):
    with open(path, "r") as f:
        config = parse_config(f.read(), overrides)
    logger.info(f"📄 Loaded config {path}: experiment={config.experiment}, study={config.study}")
    return config


def default_config(experiment="example1", **overrides):
    return build_config({"experiment": experiment}, overrides)
