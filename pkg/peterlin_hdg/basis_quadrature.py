"""
Reference-element bases and quadrature.

Reference triangle: vertices (0,0), (1,0), (0,1). Reference segment: [0, 1].

Triangle rules are collapsed (Duffy) products of a Gauss-Jacobi rule in the
collapsed direction and a Gauss-Legendre rule along the fibres, so any
exactness up to MAX_EXACTNESS is available with positive weights.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi

from .exceptions import UnsupportedDegreeError

MAX_EXACTNESS = 30
CELL_DEGREES = (0, 1, 2)
FACET_DEGREES = (0, 1, 2)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness: int

    def __len__(self):
        return len(self.weights)


def _check_exactness(exactness):
    if int(exactness) != exactness or exactness < 0 or exactness > MAX_EXACTNESS:
        raise UnsupportedDegreeError(
            f"Quadrature exactness {exactness} outside supported range 0..{MAX_EXACTNESS}"
        )
    return int(exactness)


def triangle_rule(exactness):
    """Rule on the reference triangle exact for polynomials of total degree <= exactness."""
    exactness = _check_exactness(exactness)
    n = exactness // 2 + 1

    t, w_jac = roots_jacobi(n, 1.0, 0.0)
    s, w_leg = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (1.0 + t)
    v = 0.5 * (1.0 + s)

    x = np.repeat(u, n)
    y = np.repeat(1.0 - u, n) * np.tile(v, n)
    weights = np.outer(0.25 * w_jac, 0.5 * w_leg).ravel()
    return QuadratureRule(np.column_stack([x, y]), weights, exactness)


def segment_rule(exactness):
    """Gauss-Legendre rule on [0, 1] exact up to the given degree."""
    exactness = _check_exactness(exactness)
    n = exactness // 2 + 1
    s, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(0.5 * (1.0 + s), 0.5 * w, exactness)


# ============================================
# CELL BASES
# ============================================

_LAMBDA_GRADS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def cell_dimension(k):
    return (k + 1) * (k + 2) // 2


def cell_nodes(k):
    """Reference coordinates of the nodal points: vertices first, then edge midpoints."""
    if k == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    if k == 1:
        return vertices
    if k == 2:
        midpoints = np.array([0.5 * (vertices[(e + 1) % 3] + vertices[(e + 2) % 3]) for e in range(3)])
        return np.vstack([vertices, midpoints])
    raise UnsupportedDegreeError(f"Cell basis degree {k} not supported (expected one of {CELL_DEGREES})")


def eval_cell_basis(k, pts):
    """
    Nodal Lagrange basis of degree k on the reference triangle.

    Returns (values, gradients) with shapes (npts, dim) and (npts, dim, 2).
    Gradients are with respect to reference coordinates.
    """
    if k not in CELL_DEGREES:
        raise UnsupportedDegreeError(f"Cell basis degree {k} not supported (expected one of {CELL_DEGREES})")

    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    npts = len(pts)
    x, y = pts[:, 0], pts[:, 1]

    if k == 0:
        return np.ones((npts, 1)), np.zeros((npts, 1, 2))

    lam = np.column_stack([1.0 - x - y, x, y])
    if k == 1:
        grads = np.broadcast_to(_LAMBDA_GRADS, (npts, 3, 2)).copy()
        return lam, grads

    values = np.empty((npts, 6))
    grads = np.empty((npts, 6, 2))
    for i in range(3):
        values[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[:, i, :] = (4.0 * lam[:, i] - 1.0)[:, None] * _LAMBDA_GRADS[i]
    for e in range(3):
        a, b = (e + 1) % 3, (e + 2) % 3
        values[:, 3 + e] = 4.0 * lam[:, a] * lam[:, b]
        grads[:, 3 + e, :] = 4.0 * (lam[:, b][:, None] * _LAMBDA_GRADS[a] + lam[:, a][:, None] * _LAMBDA_GRADS[b])
    return values, grads


class CellBasis:
    """Tabulation helper bound to one degree."""

    def __init__(self, k):
        if k not in CELL_DEGREES:
            raise UnsupportedDegreeError(f"Cell basis degree {k} not supported")
        self.degree = k
        self.dimension = cell_dimension(k)
        self.nodes = cell_nodes(k)

    def evaluate(self, pts):
        return eval_cell_basis(self.degree, pts)


# ============================================
# FACET BASES
# ============================================

def facet_nodes(k):
    if k == 0:
        return np.array([0.5])
    if k == 1:
        return np.array([0.0, 1.0])
    if k == 2:
        return np.array([0.0, 1.0, 0.5])
    raise UnsupportedDegreeError(f"Facet basis degree {k} not supported (expected one of {FACET_DEGREES})")


def eval_facet_basis(k, s):
    """Nodal Lagrange basis of degree k on [0, 1], endpoints first. Shape (npts, k+1)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if k == 0:
        return np.ones((len(s), 1))
    if k == 1:
        return np.column_stack([1.0 - s, s])
    if k == 2:
        return np.column_stack([(1.0 - s) * (1.0 - 2.0 * s), s * (2.0 * s - 1.0), 4.0 * s * (1.0 - s)])
    raise UnsupportedDegreeError(f"Facet basis degree {k} not supported (expected one of {FACET_DEGREES})")


class FacetBasis:
    def __init__(self, k):
        if k not in FACET_DEGREES:
            raise UnsupportedDegreeError(f"Facet basis degree {k} not supported")
        self.degree = k
        self.dimension = k + 1
        self.nodes = facet_nodes(k)

    def evaluate(self, s):
        return eval_facet_basis(self.degree, s)
