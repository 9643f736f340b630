import math

import numpy as np
import pytest

from peterlin_hdg.basis_quadrature import (
    MAX_EXACTNESS,
    CellBasis,
    FacetBasis,
    cell_nodes,
    eval_cell_basis,
    eval_facet_basis,
    facet_nodes,
    segment_rule,
    triangle_rule,
)
from peterlin_hdg.exceptions import UnsupportedDegreeError


def monomial_integral(a, b):
    """Integral of x^a y^b over the reference triangle."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("exactness", [0, 1, 2, 4, 7, 10, 16])
def test_triangle_rule_integrates_monomials(exactness):
    rule = triangle_rule(exactness)
    x, y = rule.points[:, 0], rule.points[:, 1]
    for a in range(exactness + 1):
        for b in range(exactness + 1 - a):
            assert np.dot(rule.weights, x ** a * y ** b) == pytest.approx(monomial_integral(a, b), rel=1e-12)


def test_triangle_rule_points_inside_with_positive_weights():
    rule = triangle_rule(MAX_EXACTNESS)
    assert np.all(rule.weights > 0)
    assert np.all(rule.points >= 0)
    assert np.all(rule.points.sum(axis=1) <= 1.0)
    assert rule.weights.sum() == pytest.approx(0.5)


@pytest.mark.parametrize("exactness", [1, 3, 6, 9])
def test_segment_rule(exactness):
    rule = segment_rule(exactness)
    for n in range(exactness + 1):
        assert np.dot(rule.weights, rule.points ** n) == pytest.approx(1.0 / (n + 1), rel=1e-12)


@pytest.mark.parametrize("exactness", [-1, MAX_EXACTNESS + 1, 2.5])
def test_rule_range(exactness):
    with pytest.raises(UnsupportedDegreeError):
        triangle_rule(exactness)
    with pytest.raises(UnsupportedDegreeError):
        segment_rule(exactness)


@pytest.mark.parametrize("k", [1, 2])
def test_cell_basis_is_nodal(k):
    values, _ = eval_cell_basis(k, cell_nodes(k))
    np.testing.assert_allclose(values, np.eye(len(values)), atol=1e-14)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_partition_of_unity(k):
    points = triangle_rule(6).points
    values, grads = eval_cell_basis(k, points)
    np.testing.assert_allclose(values.sum(axis=1), 1.0)
    np.testing.assert_allclose(grads.sum(axis=1), 0.0, atol=1e-13)


@pytest.mark.parametrize("k", [1, 2])
def test_gradients_match_finite_differences(k):
    points = triangle_rule(4).points
    _, grads = eval_cell_basis(k, points)
    h = 1e-6
    for axis in range(2):
        shift = np.zeros(2)
        shift[axis] = h
        plus, _ = eval_cell_basis(k, points + shift)
        minus, _ = eval_cell_basis(k, points - shift)
        np.testing.assert_allclose((plus - minus) / (2 * h), grads[..., axis], atol=1e-8)


def test_p2_edge_function_vanishes_on_other_edges():
    # edge function 3 + e lives on edge e (opposite vertex e)
    s = np.linspace(0.0, 1.0, 7)
    edge0 = np.column_stack([1.0 - s, s])
    edge1 = np.column_stack([np.zeros_like(s), s])
    values0, _ = eval_cell_basis(2, edge0)
    values1, _ = eval_cell_basis(2, edge1)
    np.testing.assert_allclose(values0[:, 4:], 0.0, atol=1e-14)
    np.testing.assert_allclose(values1[:, [3, 5]], 0.0, atol=1e-14)


def test_unsupported_cell_degree():
    with pytest.raises(UnsupportedDegreeError):
        eval_cell_basis(3, [[0.2, 0.2]])
    with pytest.raises(UnsupportedDegreeError):
        CellBasis(4)


@pytest.mark.parametrize("k", [0, 1, 2])
def test_facet_basis_is_nodal(k):
    values = eval_facet_basis(k, facet_nodes(k))
    np.testing.assert_allclose(values, np.eye(k + 1), atol=1e-14)
    np.testing.assert_allclose(eval_facet_basis(k, np.linspace(0, 1, 5)).sum(axis=1), 1.0)


def test_basis_helpers():
    basis = CellBasis(2)
    assert basis.dimension == 6
    assert basis.evaluate([[0.1, 0.1]])[0].shape == (1, 6)
    facet = FacetBasis(1)
    assert facet.dimension == 2
    with pytest.raises(UnsupportedDegreeError):
        eval_facet_basis(3, [0.5])
