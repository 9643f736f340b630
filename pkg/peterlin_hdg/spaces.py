"""
Global degree-of-freedom layout and time-level states.

Unknown vector order (each block contiguous):

    u   | û (interior facets only) | p | p̂ | C | Ĉ | pressure-mean multiplier

Tensor fields keep the symmetric upper triangle (C11, C12, C22). Boundary
facets carry no û unknowns: their index is -1 in `facet_uhat` and the State
view re-inserts zeros there.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .basis_quadrature import cell_dimension, eval_cell_basis, triangle_rule
from .exceptions import UnsupportedDegreeError

logger = logging.getLogger(__name__)

# Frobenius weights of the stored components (C12 appears twice in C:D)
FROBENIUS_WEIGHTS = np.array([1.0, 2.0, 1.0])
TRACE_COMPONENTS = (0, 2)


def sym_to_full(c):
    """(..., 3) stored components -> (..., 2, 2) symmetric tensors."""
    c = np.asarray(c)
    full = np.empty(c.shape[:-1] + (2, 2))
    full[..., 0, 0] = c[..., 0]
    full[..., 0, 1] = c[..., 1]
    full[..., 1, 0] = c[..., 1]
    full[..., 1, 1] = c[..., 2]
    return full


def full_to_sym(tensor):
    tensor = np.asarray(tensor)
    return np.stack([tensor[..., 0, 0], 0.5 * (tensor[..., 0, 1] + tensor[..., 1, 0]), tensor[..., 1, 1]], axis=-1)


class DofLayout:
    """
    Index maps for the six discrete fields plus the mean multiplier.

    cell_u      (T, 2, dim P_k)
    facet_uhat  (F, 2, k+1)     -1 on boundary facets
    cell_p      (T, dim P_{k-1})
    facet_phat  (F, k+1)
    cell_C      (T, 3, dim P_k)
    facet_Chat  (F, 3, k+1)
    multiplier  scalar index (last)
    """

    def __init__(self, mesh, k):
        if int(k) != k or k < 1:
            raise ValueError(f"Polynomial degree must be >= 1, got {k}")
        self.mesh = mesh
        self.degree = int(k)
        self.n_cell_basis = cell_dimension(self.degree)
        self.n_pressure_basis = cell_dimension(self.degree - 1)
        self.n_facet_basis = self.degree + 1

        T = mesh.n_cells
        F = mesh.n_facets
        interior = mesh.interior_facets
        nb, npb, nf = self.n_cell_basis, self.n_pressure_basis, self.n_facet_basis

        sizes = {
            "u": 2 * T * nb,
            "uhat": 2 * len(interior) * nf,
            "p": T * npb,
            "phat": F * nf,
            "C": 3 * T * nb,
            "Chat": 3 * F * nf,
            "multiplier": 1,
        }
        self.blocks = {}
        offset = 0
        for name, size in sizes.items():
            self.blocks[name] = slice(offset, offset + size)
            offset += size
        self.total = offset

        def block_range(name, shape):
            start = self.blocks[name].start
            return start + np.arange(int(np.prod(shape)), dtype=np.int64).reshape(shape)

        self.cell_u = block_range("u", (T, 2, nb))
        self.facet_uhat = np.full((F, 2, nf), -1, dtype=np.int64)
        self.facet_uhat[interior] = block_range("uhat", (len(interior), 2, nf))
        self.cell_p = block_range("p", (T, npb))
        self.facet_phat = block_range("phat", (F, nf))
        self.cell_C = block_range("C", (T, 3, nb))
        self.facet_Chat = block_range("Chat", (F, 3, nf))
        self.multiplier = self.blocks["multiplier"].start

        logger.debug(f"🔢 Layout k={self.degree}: {self.total:,} unknowns")

    def block_size(self, name):
        block = self.blocks[name]
        return block.stop - block.start

    def cell_dofs(self):
        """All cell-interior unknowns (u, p, C) grouped per cell, shape (T, n_local)."""
        T = self.mesh.n_cells
        return np.concatenate(
            [self.cell_u.reshape(T, -1), self.cell_p.reshape(T, -1), self.cell_C.reshape(T, -1)], axis=1
        )

    def __repr__(self):
        parts = ", ".join(f"{name}={self.block_size(name)}" for name in self.blocks)
        return f"DofLayout(k={self.degree}, total={self.total}, {parts})"


def build_layout(mesh, k):
    return DofLayout(mesh, k)


# ============================================
# STATE
# ============================================

@dataclass
class State:
    """Coefficients of every field at one time level."""

    layout: DofLayout
    vector: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=float)
        if self.vector.shape != (self.layout.total,):
            raise ValueError(f"State vector has shape {self.vector.shape}, expected ({self.layout.total},)")

    @classmethod
    def zeros(cls, layout, t=0.0):
        return cls(layout, np.zeros(layout.total), t)

    def copy(self):
        return State(self.layout, self.vector.copy(), self.t)

    @property
    def u(self):
        return self.vector[self.layout.cell_u]

    @property
    def uhat(self):
        idx = self.layout.facet_uhat
        values = np.zeros(idx.shape)
        mask = idx >= 0
        values[mask] = self.vector[idx[mask]]
        return values

    @property
    def p(self):
        return self.vector[self.layout.cell_p]

    @property
    def phat(self):
        return self.vector[self.layout.facet_phat]

    @property
    def C(self):
        return self.vector[self.layout.cell_C]

    @property
    def Chat(self):
        return self.vector[self.layout.facet_Chat]

    @property
    def multiplier(self):
        return float(self.vector[self.layout.multiplier])

    def set_field(self, name, values):
        """Write one field; û entries of boundary facets are ignored."""
        index = {
            "u": self.layout.cell_u,
            "uhat": self.layout.facet_uhat,
            "p": self.layout.cell_p,
            "phat": self.layout.facet_phat,
            "C": self.layout.cell_C,
            "Chat": self.layout.facet_Chat,
        }[name]
        values = np.broadcast_to(np.asarray(values, dtype=float), index.shape)
        mask = index >= 0
        self.vector[index[mask]] = values[mask]
        return self


# ============================================
# INITIAL DATA
# ============================================

def _evaluate_on_cells(func, points):
    """Call func on (n, 2) points and reshape back to the cell/point layout."""
    flat = points.reshape(-1, 2)
    values = np.asarray(func(flat), dtype=float)
    return values.reshape(points.shape[:-1] + (-1,))


def project_initial(mesh, layout, exact_u0, exact_C0, t=0.0, exactness=None):
    """
    Cellwise L2 projection of u0 into V_h and C0 into W_h.

    exact_u0 maps (n, 2) points to (n, 2) velocities, exact_C0 to (n, 3)
    stored tensor components. Hat and pressure blocks stay zero.
    """
    k = layout.degree
    exactness = exactness if exactness is not None else 2 * k + 6
    if exactness < 2 * k:
        raise UnsupportedDegreeError(f"Projection quadrature of exactness {exactness} cannot resolve the degree {k} mass matrix")
    rule = triangle_rule(exactness)
    phi, _ = eval_cell_basis(k, rule.points)

    points = mesh.origins[:, None, :] + np.einsum("tij,qj->tqi", mesh.jacobians, rule.points)
    weights = rule.weights[None, :] * np.abs(mesh.determinants)[:, None]

    mass = np.einsum("tq,qa,qb->tab", weights, phi, phi)

    u0 = _evaluate_on_cells(exact_u0, points)
    C0 = _evaluate_on_cells(exact_C0, points)
    rhs_u = np.einsum("tq,qa,tqi->tia", weights, phi, u0)
    rhs_C = np.einsum("tq,qa,tqi->tia", weights, phi, C0)

    state = State.zeros(layout, t)
    state.set_field("u", np.linalg.solve(mass[:, None], rhs_u[..., None])[..., 0])
    state.set_field("C", np.linalg.solve(mass[:, None], rhs_C[..., None])[..., 0])
    return state
