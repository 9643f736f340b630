"""Hybridizable discontinuous Galerkin solver for the diffusive Peterlin viscoelastic model."""

__version__ = "0.1.0"

from .config import RunConfig, default_config, load_config, parse_config
from .exceptions import (
    BlowUpError,
    ConfigError,
    MissingExactSolutionError,
    PeterlinHdgError,
    StepFailureError,
    UnsupportedDegreeError,
)
from .forms import FormContext, ModelParams
from .mesh import StructuredMesh, build_structured_mesh, unit_square_mesh
from .spaces import DofLayout, State, build_layout, project_initial
from .stepper import RunResult, SemiImplicitStepper, assemble_step, run, solve_step
from .verification import ManufacturedCase, RotatingForceCase, ZeroCase, case_for, eoc, error_norms
