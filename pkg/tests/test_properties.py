import numpy as np

from peterlin_hdg.properties import (
    PropertyResult,
    check_mass_conservation,
    check_null_space,
    check_zero_fixed_point,
)


def test_property_result():
    result = PropertyResult("suite", 3, 1e-13, 1e-12)
    assert result.passed
    assert result.as_dict() == {"suite": "suite", "cases": 3, "max_residual": 1e-13, "tolerance": 1e-12, "passed": True}
    assert not PropertyResult("suite", 1, np.nan, 1.0).passed


def test_mass_conservation_small():
    result = check_mass_conservation(levels=(1,), degrees=(1, 2), steps=2)
    assert result.cases == 4
    assert result.passed, result.max_residual


def test_zero_fixed_point():
    result = check_zero_fixed_point(level=1, steps=2)
    assert result.max_residual == 0.0
    assert result.passed


def test_null_space():
    result = check_null_space(levels=(1, 2))
    assert result.passed, result.max_residual
