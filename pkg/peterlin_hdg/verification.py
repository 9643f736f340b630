"""
Flow cases, forcing synthesis, error norms and convergence rates.

Closed-form fields are differentiated by hand. Every field is a product of
squared sines, sines of shifted arguments and constants, so any mixed
partial derivative follows from the Leibniz rule applied to the
one-dimensional factors below.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .basis_quadrature import eval_cell_basis, triangle_rule
from .exceptions import MissingExactSolutionError
from .forms import FormContext
from .mesh import unit_square_mesh
from .spaces import FROBENIUS_WEIGHTS, build_layout, full_to_sym, project_initial, sym_to_full

logger = logging.getLogger(__name__)

UNDEFINED_RATE = float("nan")

STREAM_SCALE = math.sqrt(3.0) / (2.0 * math.pi)
SHEAR_SCALE = math.pi / math.sqrt(3.0)


# ============================================
# ONE-DIMENSIONAL FACTORS
# ============================================

def _sin_squared(z, n):
    """n-th derivative of sin^2(pi z)."""
    if n == 0:
        return np.sin(np.pi * z) ** 2
    return -0.5 * (2.0 * np.pi) ** n * np.cos(2.0 * np.pi * z + 0.5 * n * np.pi)


def _sine(z, n, frequency=np.pi):
    """n-th derivative of sin(frequency z)."""
    return frequency ** n * np.sin(frequency * z + 0.5 * n * np.pi)


def _split(points):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return points[:, 0], points[:, 1]


# ============================================
# FLOW CASES
# ============================================

class FlowCase:
    """Initial data and forcing of one experiment; exact fields when known."""

    name = "case"
    has_exact_solution = False

    def initial_velocity(self, points):
        raise NotImplementedError

    def initial_conformation(self, points):
        raise NotImplementedError

    def forcing(self, points, t, nu, epsilon):
        """(f, F) with shapes (n, 2) and (n, 3)."""
        raise NotImplementedError

    def forcing_function(self, nu, epsilon):
        """Bind the model coefficients: returns forcing(points, t)."""
        return lambda points, t: self.forcing(points, t, nu, epsilon)

    def exact(self, points, t):
        raise MissingExactSolutionError(f"Case '{self.name}' has no closed-form solution")


class ManufacturedCase(FlowCase):
    """
    Smooth manufactured solution on the unit square.

        phi = sqrt(3)/(2 pi) sin^2(pi x) sin^2(pi y) sin(pi (x + y + t))
        u   = (-d phi/dy, d phi/dx)
        p   = sin(pi (x + 2y + t))
        C11 = 1/2 sin^2(pi x) sin^2(pi y) sin(pi (x + t)) + 1
        C22 = 1/2 sin^2(pi x) sin^2(pi y) sin(pi (y + t)) + 1
        C12 = pi/sqrt(3) phi

    u vanishes on the boundary and dC/dn = 0 there.
    """

    name = "example1"
    has_exact_solution = True

    # ---- partial derivatives d^i/dx^i d^j/dy^j d^l/dt^l -----------------

    def stream(self, x, y, t, i=0, j=0, l=0):
        z = x + y + t
        total = 0.0
        for a in range(i + 1):
            for b in range(j + 1):
                total = total + (
                    math.comb(i, a) * math.comb(j, b)
                    * _sin_squared(x, a) * _sin_squared(y, b) * _sine(z, (i - a) + (j - b) + l)
                )
        return STREAM_SCALE * total

    def conformation_partial(self, x, y, t, i=0, j=0, l=0):
        """Stored components (C11, C12, C22) of one mixed partial, shape (n, 3)."""
        c11 = 0.0
        for a in range(i + 1):
            c11 = c11 + math.comb(i, a) * _sin_squared(x, a) * _sine(x + t, i - a + l)
        c11 = 0.5 * c11 * _sin_squared(y, j)

        c22 = 0.0
        for b in range(j + 1):
            c22 = c22 + math.comb(j, b) * _sin_squared(y, b) * _sine(y + t, j - b + l)
        c22 = 0.5 * c22 * _sin_squared(x, i)

        if i == j == l == 0:
            c11 = c11 + 1.0
            c22 = c22 + 1.0
        c12 = SHEAR_SCALE * self.stream(x, y, t, i, j, l)
        return np.column_stack(np.broadcast_arrays(c11, c12, c22))

    def pressure_partial(self, x, y, t, i=0, j=0, l=0):
        n = i + j + l
        return np.pi ** n * 2.0 ** j * np.sin(np.pi * (x + 2.0 * y + t) + 0.5 * n * np.pi)

    # ---- fields -----------------------------------------------------------

    def velocity(self, points, t):
        x, y = _split(points)
        return np.column_stack([-self.stream(x, y, t, 0, 1), self.stream(x, y, t, 1, 0)])

    def velocity_gradient(self, points, t):
        """grad u with [i, j] = du_i/dx_j, shape (n, 2, 2)."""
        x, y = _split(points)
        s_xx = self.stream(x, y, t, 2, 0)
        s_xy = self.stream(x, y, t, 1, 1)
        s_yy = self.stream(x, y, t, 0, 2)
        grad = np.empty((len(x), 2, 2))
        grad[:, 0, 0] = -s_xy
        grad[:, 0, 1] = -s_yy
        grad[:, 1, 0] = s_xx
        grad[:, 1, 1] = s_xy
        return grad

    def velocity_laplacian(self, points, t):
        x, y = _split(points)
        lap_1 = -(self.stream(x, y, t, 2, 1) + self.stream(x, y, t, 0, 3))
        lap_2 = self.stream(x, y, t, 3, 0) + self.stream(x, y, t, 1, 2)
        return np.column_stack([lap_1, lap_2])

    def velocity_time_derivative(self, points, t):
        x, y = _split(points)
        return np.column_stack([-self.stream(x, y, t, 0, 1, 1), self.stream(x, y, t, 1, 0, 1)])

    def pressure(self, points, t):
        x, y = _split(points)
        return self.pressure_partial(x, y, t)

    def pressure_gradient(self, points, t):
        x, y = _split(points)
        return np.column_stack([self.pressure_partial(x, y, t, 1, 0), self.pressure_partial(x, y, t, 0, 1)])

    def conformation(self, points, t):
        x, y = _split(points)
        return self.conformation_partial(x, y, t)

    def conformation_gradient(self, points, t):
        """(n, 3, 2): stored component m, direction k."""
        x, y = _split(points)
        return np.stack([self.conformation_partial(x, y, t, 1, 0), self.conformation_partial(x, y, t, 0, 1)], axis=2)

    def conformation_laplacian(self, points, t):
        x, y = _split(points)
        return self.conformation_partial(x, y, t, 2, 0) + self.conformation_partial(x, y, t, 0, 2)

    def conformation_time_derivative(self, points, t):
        x, y = _split(points)
        return self.conformation_partial(x, y, t, 0, 0, 1)

    def initial_velocity(self, points):
        return self.velocity(points, 0.0)

    def initial_conformation(self, points):
        return self.conformation(points, 0.0)

    def exact(self, points, t):
        return self.velocity(points, t), self.pressure(points, t), self.conformation(points, t)

    # ---- forcing ----------------------------------------------------------

    def forcing(self, points, t, nu, epsilon):
        u = self.velocity(points, t)
        grad_u = self.velocity_gradient(points, t)
        C = self.conformation(points, t)
        C_full = sym_to_full(C)
        grad_C = self.conformation_gradient(points, t)
        grad_C_full = sym_to_full(np.transpose(grad_C, (0, 2, 1)))  # (n, 2 directions, 2, 2)
        trace = C[:, 0] + C[:, 2]

        # div((trC) C)_i = sum_j d_j(trC) C_ij + trC d_j C_ij
        grad_trace = grad_C[:, 0, :] + grad_C[:, 2, :]
        div_C = np.stack([grad_C_full[:, 0, 0, 0] + grad_C_full[:, 1, 0, 1],
                          grad_C_full[:, 0, 1, 0] + grad_C_full[:, 1, 1, 1]], axis=1)
        elastic = np.einsum("nij,nj->ni", C_full, grad_trace) + trace[:, None] * div_C

        f = (
            self.velocity_time_derivative(points, t)
            + np.einsum("nij,nj->ni", grad_u, u)
            - nu * self.velocity_laplacian(points, t)
            + self.pressure_gradient(points, t)
            - elastic
        )

        stretch = full_to_sym(grad_u @ C_full + C_full @ np.transpose(grad_u, (0, 2, 1)))
        identity = np.column_stack([trace, np.zeros_like(trace), trace])
        F = (
            self.conformation_time_derivative(points, t)
            + np.einsum("nmk,nk->nm", grad_C, u)
            - epsilon * self.conformation_laplacian(points, t)
            - stretch
            - identity
            + (trace ** 2)[:, None] * C
        )
        return f, F


class RotatingForceCase(FlowCase):
    """
    Swirling start under a rotating body force; no closed-form solution.

        psi = -200 (x(1-x) y(1-y))^2,  u0 = (-d psi/dy, d psi/dx)
        C0  = sqrt(2)/2 I,  f = (-70 (y - 1/2), 70 (x - 1/2)),  F = 0
    """

    name = "example2"
    force_strength = 70.0
    stream_strength = 200.0

    def initial_velocity(self, points):
        x, y = _split(points)
        gx, gy = x * (1.0 - x), y * (1.0 - y)
        dgx, dgy = 1.0 - 2.0 * x, 1.0 - 2.0 * y
        scale = 2.0 * self.stream_strength
        return np.column_stack([scale * gx ** 2 * gy * dgy, -scale * gx * dgx * gy ** 2])

    def initial_conformation(self, points):
        x, _ = _split(points)
        value = math.sqrt(2.0) / 2.0
        return np.column_stack([np.full_like(x, value), np.zeros_like(x), np.full_like(x, value)])

    def forcing(self, points, t, nu, epsilon):
        x, y = _split(points)
        f = np.column_stack([-self.force_strength * (y - 0.5), self.force_strength * (x - 0.5)])
        return f, np.zeros((len(x), 3))


class ZeroCase(FlowCase):
    """Zero initial data, zero forcing: the discrete solution stays zero."""

    name = "zero"
    has_exact_solution = True

    def initial_velocity(self, points):
        return np.zeros((len(np.atleast_2d(points)), 2))

    def initial_conformation(self, points):
        return np.zeros((len(np.atleast_2d(points)), 3))

    def forcing(self, points, t, nu, epsilon):
        n = len(np.atleast_2d(points))
        return np.zeros((n, 2)), np.zeros((n, 3))

    def exact(self, points, t):
        n = len(np.atleast_2d(points))
        return np.zeros((n, 2)), np.zeros(n), np.zeros((n, 3))


CASES = {
    "example1": ManufacturedCase,
    "example2": RotatingForceCase,
    "zero": ZeroCase,
}


def case_for(experiment, case=None):
    """Flow case of an experiment id; 'custom' runs pick theirs through `case`."""
    key = case if experiment == "custom" else experiment
    key = key or "zero"
    if key not in CASES:
        raise ValueError(f"Unknown flow case '{key}' (expected one of {sorted(CASES)})")
    return CASES[key]()


def eval_exact(case, x, t):
    """Exact (u, p, C) at the given point(s)."""
    return case.exact(x, t)


def eval_forcing(case, x, t, nu, epsilon):
    return case.forcing(x, t, nu, epsilon)


# ============================================
# ERROR NORMS
# ============================================

@dataclass
class ErrorRecord:
    u_l2: float
    u_h1: float
    u_h1_semi: float
    u_energy: float
    p_l2: float
    C_l2: float
    C_h1: float
    C_h1_eps: float

    def as_dict(self):
        return asdict(self)


def error_norms(mesh, layout, state, case, t, epsilon=0.0, alpha=1.0, exactness=None, ctx=None):
    """
    Errors of a discrete state against the exact fields of `case` at time t.

    Cell integrals use a rule of exactness 2k+6 unless `exactness` is given.
    The pressure error compares zero-mean versions of both pressures.
    Tensor norms are Frobenius norms.
    """
    if not case.has_exact_solution:
        raise MissingExactSolutionError(f"Case '{case.name}' has no closed-form solution")
    k = layout.degree
    degree = exactness if exactness is not None else 2 * k + 6
    if ctx is None:
        ctx = FormContext(mesh, layout, cell_exactness=degree, facet_exactness=degree)

    points = ctx.cell_points.reshape(-1, 2)
    T, nq = ctx.cell_weights.shape
    w = ctx.cell_weights

    u_exact, p_exact, C_exact = case.exact(points, t)
    u_exact = np.reshape(u_exact, (T, nq, 2))
    p_exact = np.reshape(p_exact, (T, nq))
    C_exact = np.reshape(C_exact, (T, nq, 3))

    e_u = ctx.cell_values(state.u) - u_exact
    u_l2_sq = np.sum(w[..., None] * e_u ** 2)

    e_C = ctx.cell_values(state.C) - C_exact
    C_l2_sq = np.sum(w[..., None] * FROBENIUS_WEIGHTS * e_C ** 2)

    p_h = ctx.pressure_values(state.p)
    area = w.sum()
    p_err = (p_h - np.sum(w * p_h) / area) - (p_exact - np.sum(w * p_exact) / area)
    p_l2 = math.sqrt(np.sum(w * p_err ** 2))

    # gradients (ManufacturedCase only; ZeroCase has none)
    if hasattr(case, "velocity_gradient"):
        grad_u_exact = case.velocity_gradient(points, t).reshape(T, nq, 2, 2)
        grad_C_exact = case.conformation_gradient(points, t).reshape(T, nq, 3, 2)
    else:
        grad_u_exact = np.zeros((T, nq, 2, 2))
        grad_C_exact = np.zeros((T, nq, 3, 2))
    ge_u = ctx.cell_gradients(state.u) - grad_u_exact
    ge_C = ctx.cell_gradients(state.C) - grad_C_exact
    u_semi_sq = np.sum(w[..., None, None] * ge_u ** 2)
    C_semi_sq = np.sum(w[..., None, None] * FROBENIUS_WEIGHTS[:, None] * ge_C ** 2)

    # (u - u_h, u - û_h) in the velocity triple norm: the exact trace cancels
    jump = ctx.facet_values(state.u) - ctx.hat_values(state.uhat)
    facet_sq = np.sum((alpha / ctx.h)[:, None, None, None] * ctx.facet_weights[..., None] * jump ** 2)

    C_h1 = math.sqrt(C_l2_sq + C_semi_sq)
    return ErrorRecord(
        u_l2=math.sqrt(u_l2_sq),
        u_h1=math.sqrt(u_l2_sq + u_semi_sq),
        u_h1_semi=math.sqrt(u_semi_sq),
        u_energy=math.sqrt(u_semi_sq + facet_sq),
        p_l2=p_l2,
        C_l2=math.sqrt(C_l2_sq),
        C_h1=C_h1,
        C_h1_eps=math.sqrt(epsilon) * C_h1,
    )


def eoc(errors, steps):
    """
    Experimental orders between consecutive entries.

    rate_i = log(e_{i-1}/e_i) / log(s_{i-1}/s_i); non-positive errors (or
    equal steps) give UNDEFINED_RATE.
    """
    errors = [float(e) for e in errors]
    steps = [float(s) for s in steps]
    if len(errors) < 2 or len(errors) != len(steps):
        raise ValueError("eoc needs at least two errors and one step size per error")
    rates = []
    for i in range(1, len(errors)):
        e0, e1, s0, s1 = errors[i - 1], errors[i], steps[i - 1], steps[i]
        if e0 <= 0 or e1 <= 0 or s0 <= 0 or s1 <= 0 or s0 == s1:
            rates.append(UNDEFINED_RATE)
        else:
            rates.append(math.log(e0 / e1) / math.log(s0 / s1))
    return rates


# ============================================
# POSITIVITY OF THE CONFORMATION TENSOR
# ============================================

@dataclass(frozen=True)
class SpdSummary:
    min_det: float
    min_C11: float
    min_C22: float

    @property
    def positive_definite(self):
        return self.min_det > 0.0 and self.min_C11 > 0.0


def spd_sample_points(k, exactness=None):
    rule = triangle_rule(exactness if exactness is not None else max(3 * k + 1, 4 * k))
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return np.vstack([rule.points, vertices])


def spd_diagnostics(mesh, layout, state, sample_points=None):
    """Minima of det C_h, C11_h and C22_h over cell quadrature points and vertices."""
    if sample_points is None:
        sample_points = spd_sample_points(layout.degree)
    phi, _ = eval_cell_basis(layout.degree, sample_points)
    values = np.einsum("qb,tmb->tqm", phi, state.C)
    det = values[..., 0] * values[..., 2] - values[..., 1] ** 2
    return SpdSummary(float(det.min()), float(values[..., 0].min()), float(values[..., 2].min()))


# ============================================
# SOLENOIDAL DISCRETE VELOCITIES
# ============================================

def boundary_vertex_mask(mesh):
    x0, x1, y0, y1 = mesh.domain
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    return np.isclose(x, x0) | np.isclose(x, x1) | np.isclose(y, y0) | np.isclose(y, y1)


def random_stream_values(mesh, rng):
    """Random continuous P2 stream function (vertex then facet-midpoint nodes), zero on the boundary."""
    values = np.concatenate([rng.standard_normal(mesh.n_vertices), rng.standard_normal(mesh.n_facets)])
    values[: mesh.n_vertices][boundary_vertex_mask(mesh)] = 0.0
    values[mesh.n_vertices:][mesh.boundary_mask] = 0.0
    return values


def stream_velocity(mesh, layout, stream_values):
    """
    P1 coefficients (T, 2, 3) of curl psi for a continuous P2 stream function.

    The result is divergence free in every cell, has continuous normal
    component across facets and zero normal flux where psi vanishes on the
    boundary.
    """
    if layout.degree != 1:
        raise ValueError("stream_velocity builds P1 velocities; use a k=1 layout")
    nodes = np.concatenate([mesh.cells, mesh.n_vertices + mesh.cell_facets], axis=1)
    psi = np.asarray(stream_values)[nodes]
    _, ref_grads = eval_cell_basis(2, np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    grads = np.einsum("tij,abj->tabi", mesh.inverse_transposes, ref_grads)
    grad_psi = np.einsum("tabi,tb->tai", grads, psi)
    return np.stack([-grad_psi[..., 1], grad_psi[..., 0]], axis=1)


# ============================================
# CONVERGENCE REPORTS
# ============================================

ERROR_COLUMNS = ("u_l2", "u_h1", "p_l2", "C_l2", "C_h1_eps")


@dataclass
class ConvergenceReport:
    """Error table with rates on the finer row of each consecutive pair."""

    kind: str
    table: pd.DataFrame
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_records(cls, kind, steps, counts, records, metadata=None):
        if kind not in ("h", "tau"):
            raise ValueError(f"Convergence kind must be 'h' or 'tau', got '{kind}'")
        rows = {kind: list(steps), "N": list(counts)}
        for column in ERROR_COLUMNS:
            values = [getattr(r, column) for r in records]
            rows[column] = values
            rows[f"{column}_rate"] = [UNDEFINED_RATE] + (eoc(values, steps) if len(values) > 1 else [])
        table = pd.DataFrame(rows)
        for key, value in (metadata or {}).items():
            table[key] = value
        return cls(kind, table, dict(metadata or {}))

    def rates(self, column):
        return self.table[f"{column}_rate"].to_numpy()[1:]

    def errors(self, column):
        return self.table[column].to_numpy()

    def to_csv(self, path):
        self.table.to_csv(path, index=False, float_format="%.6g")
        return path


def projection_error_study(levels, case=None, t=0.0, k=1, exactness=None):
    """L2 projection errors of the case fields on unit-square meshes (no solver)."""
    case = case or ManufacturedCase()
    records, steps = [], []
    for level in levels:
        mesh = unit_square_mesh(level)
        layout = build_layout(mesh, k)
        state = project_initial(
            mesh, layout,
            lambda x: case.velocity(x, t),
            lambda x: case.conformation(x, t),
            t=t,
        )
        records.append(error_norms(mesh, layout, state, case, t, exactness=exactness))
        steps.append(mesh.h)
    return ConvergenceReport.from_records("h", steps, [0] * len(steps), records)
