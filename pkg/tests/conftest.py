import os

import numpy as np
import pytest

from peterlin_hdg.forms import FormContext, ModelParams
from peterlin_hdg.mesh import StructuredMesh, unit_square_mesh
from peterlin_hdg.spaces import build_layout

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run the acceptance studies")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="acceptance study, use --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def unit_mesh():
    """Single square, two cells."""
    return StructuredMesh(1, 1)


@pytest.fixture
def mesh4():
    return unit_square_mesh(2)


@pytest.fixture
def ctx4(mesh4):
    return FormContext(mesh4, build_layout(mesh4, 1))


@pytest.fixture
def params():
    return ModelParams(nu=1.0, epsilon=1.0, alpha=8.0, beta=10.0, tau=0.01)


@pytest.fixture
def config_dir():
    return CONFIG_DIR
