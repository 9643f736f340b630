"""
Local matrices and vectors for every term of the semi-implicit HDG scheme.

All kernels work on the whole mesh at once: a LocalBlock stacks one dense
block per cell (values of shape (T, m, n)) together with the global row and
column indices of that block. Passing `cells=` restricts the stack.

Local "hybrid" ordering for a scalar field on one cell:

    [ cell basis (nb) | edge 0 trace (nf) | edge 1 trace | edge 2 trace ]

Vector and tensor fields repeat this per stored component. Tensor
components are weighted by (1, 2, 1) so that every pairing is the
Frobenius product C:D.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis_quadrature import CellBasis, FacetBasis, segment_rule, triangle_rule
from .spaces import FROBENIUS_WEIGHTS, sym_to_full

logger = logging.getLogger(__name__)


# ============================================
# PARAMETERS AND CONTAINERS
# ============================================

@dataclass(frozen=True)
class ModelParams:
    """nu: viscosity, epsilon: conformation diffusion, alpha/beta: penalties, tau: time step."""

    nu: float
    epsilon: float
    alpha: float
    beta: float
    tau: float

    def __post_init__(self):
        problems = []
        if not self.nu > 0:
            problems.append(f"nu must be > 0 (got {self.nu})")
        if not self.epsilon >= 0:
            problems.append(f"epsilon must be >= 0 (got {self.epsilon})")
        if not self.alpha > 0:
            problems.append(f"alpha must be > 0 (got {self.alpha})")
        if not self.beta > 0:
            problems.append(f"beta must be > 0 (got {self.beta})")
        if not self.tau > 0:
            problems.append(f"tau must be > 0 (got {self.tau})")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class LocalBlock:
    """Stack of dense cell blocks with global index maps (-1 = constrained)."""

    values: np.ndarray
    rows: np.ndarray
    cols: np.ndarray

    def transpose(self):
        return LocalBlock(np.transpose(self.values, (0, 2, 1)), self.cols, self.rows)

    def select(self, cells):
        cells = np.atleast_1d(cells)
        return LocalBlock(self.values[cells], self.rows[cells], self.cols[cells])

    def scaled(self, factor):
        return LocalBlock(factor * self.values, self.rows, self.cols)

    def triplets(self):
        n_cells, m, n = self.values.shape
        rows = np.broadcast_to(self.rows[:, :, None], (n_cells, m, n))
        cols = np.broadcast_to(self.cols[:, None, :], (n_cells, m, n))
        keep = (rows >= 0) & (cols >= 0)
        return rows[keep], cols[keep], self.values[keep]


@dataclass
class LocalVector:
    values: np.ndarray
    rows: np.ndarray

    def select(self, cells):
        cells = np.atleast_1d(cells)
        return LocalVector(self.values[cells], self.rows[cells])


def assemble(blocks, size):
    """Sum stacked local blocks into one CSR matrix."""
    if isinstance(blocks, LocalBlock):
        blocks = [blocks]
    rows, cols, vals = [], [], []
    for block in blocks:
        r, c, v = block.triplets()
        rows.append(r)
        cols.append(c)
        vals.append(v)
    if not rows:
        return sp.csr_matrix((size, size))
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    ).tocsr()
    matrix.sum_duplicates()
    matrix.eliminate_zeros()
    return matrix


def assemble_vector(vectors, size):
    if isinstance(vectors, LocalVector):
        vectors = [vectors]
    out = np.zeros(size)
    for vector in vectors:
        keep = vector.rows >= 0
        np.add.at(out, vector.rows[keep], vector.values[keep])
    return out


# ============================================
# TABULATION CONTEXT
# ============================================

class FormContext:
    """
    Everything the kernels need, tabulated once per (mesh, layout).

    Cell quadrature is exact to max(3k+1, 4k), facet quadrature to 3k+1.
    """

    def __init__(self, mesh, layout, cell_exactness=None, facet_exactness=None):
        k = layout.degree
        self.mesh = mesh
        self.layout = layout
        self.degree = k
        self.cell_rule = triangle_rule(cell_exactness if cell_exactness is not None else max(3 * k + 1, 4 * k))
        self.facet_rule = segment_rule(facet_exactness if facet_exactness is not None else 3 * k + 1)

        T = mesh.n_cells
        self.n_cells = T
        self.nb = layout.n_cell_basis
        self.npb = layout.n_pressure_basis
        self.nf = layout.n_facet_basis
        self.n_hybrid = self.nb + 3 * self.nf
        self.h = mesh.cell_diameters
        self.cell_facets = mesh.cell_facets

        self.cell_basis = CellBasis(k)
        self.pressure_basis = CellBasis(k - 1)
        self.facet_basis = FacetBasis(k)

        # cell quadrature
        self.phi, ref_grads = self.cell_basis.evaluate(self.cell_rule.points)
        self.chi, _ = self.pressure_basis.evaluate(self.cell_rule.points)
        self.grad_phi = np.einsum("tij,qbj->tqbi", mesh.inverse_transposes, ref_grads)
        self.cell_points = mesh.origins[:, None, :] + np.einsum("tij,qj->tqi", mesh.jacobians, self.cell_rule.points)
        self.cell_weights = self.cell_rule.weights[None, :] * np.abs(mesh.determinants)[:, None]

        # facet quadrature, parametrised along each facet's stored vertex pair
        s = self.facet_rule.points
        ends = mesh.vertices[mesh.facet_vertices[mesh.cell_facets]]
        start, stop = ends[:, :, 0, :], ends[:, :, 1, :]
        self.facet_points = start[:, :, None, :] + s[None, None, :, None] * (stop - start)[:, :, None, :]
        self.facet_weights = self.facet_rule.weights[None, None, :] * mesh.facet_lengths[mesh.cell_facets][:, :, None]
        self.normals = mesh.cell_normals()
        self.psi = self.facet_basis.evaluate(s)

        inverse = np.transpose(mesh.inverse_transposes, (0, 2, 1))
        ref = np.einsum("tij,teqj->teqi", inverse, self.facet_points - mesh.origins[:, None, None, :])
        nqf = len(s)
        values, grads = self.cell_basis.evaluate(ref.reshape(-1, 2))
        self.facet_phi = values.reshape(T, 3, nqf, self.nb)
        grads = grads.reshape(T, 3, nqf, self.nb, 2)
        self.facet_grad_phi = np.einsum("tij,teqbj->teqbi", mesh.inverse_transposes, grads)
        self.facet_dn_phi = np.einsum("teqbi,tei->teqb", self.facet_grad_phi, self.normals)

        # index maps seen from each cell
        self.u_cell = layout.cell_u
        self.u_hat = layout.facet_uhat[mesh.cell_facets]
        self.p_cell = layout.cell_p
        self.p_hat = layout.facet_phat[mesh.cell_facets].reshape(T, -1)
        self.C_cell = layout.cell_C
        self.C_hat = layout.facet_Chat[mesh.cell_facets]

    # ---- field evaluation -------------------------------------------------

    def cell_values(self, coeffs):
        """(T, m, nb) coefficients -> (T, nq, m) values at cell quadrature points."""
        return np.einsum("qb,tmb->tqm", self.phi, coeffs)

    def cell_gradients(self, coeffs):
        """(T, m, nb) -> (T, nq, m, 2)."""
        return np.einsum("tqbi,tmb->tqmi", self.grad_phi, coeffs)

    def facet_values(self, coeffs):
        """Cell traces at facet quadrature points: (T, m, nb) -> (T, 3, nqf, m)."""
        return np.einsum("teqb,tmb->teqm", self.facet_phi, coeffs)

    def hat_values(self, hat_coeffs):
        """Facet unknowns (F, m, nf) seen from each cell: -> (T, 3, nqf, m)."""
        return np.einsum("qc,temc->teqm", self.psi, hat_coeffs[self.cell_facets])

    def pressure_values(self, coeffs):
        return np.einsum("qb,tb->tq", self.chi, coeffs)

    def hybrid_index(self, cell_idx, hat_idx):
        """Concatenate (T, nb) cell and (T, 3, nf) trace indices."""
        return np.concatenate([cell_idx, hat_idx.reshape(self.n_cells, -1)], axis=1)


# ============================================
# SCALAR BUILDING BLOCKS
# ============================================

def _block_diagonal(per_edge):
    """(T, 3, a, b) edge blocks -> (T, 3a, 3b) block diagonal."""
    T, n_edges, a, b = per_edge.shape
    out = np.zeros((T, n_edges * a, n_edges * b))
    for e in range(n_edges):
        out[:, e * a:(e + 1) * a, e * b:(e + 1) * b] = per_edge[:, e]
    return out


def _hybrid(cc, cf, fc, ff):
    return np.concatenate([np.concatenate([cc, cf], axis=2), np.concatenate([fc, ff], axis=2)], axis=1)


def _component_block(scalar_blocks, row_indices, col_indices):
    """Place per-component blocks on the diagonal of one stacked block."""
    T = scalar_blocks[0].shape[0]
    m = sum(b.shape[1] for b in scalar_blocks)
    n = sum(b.shape[2] for b in scalar_blocks)
    values = np.zeros((T, m, n))
    r = c = 0
    for block in scalar_blocks:
        values[:, r:r + block.shape[1], c:c + block.shape[2]] = block
        r += block.shape[1]
        c += block.shape[2]
    return LocalBlock(values, np.concatenate(row_indices, axis=1), np.concatenate(col_indices, axis=1))


def scalar_mass(ctx, weight=None):
    w = ctx.cell_weights if weight is None else ctx.cell_weights * weight
    return np.einsum("tq,qa,qb->tab", w, ctx.phi, ctx.phi)


def scalar_diffusion(ctx, penalty):
    """Hybrid block of grad-grad + consistency + symmetry + penalty/h_K for one scalar."""
    T, nb, nf = ctx.n_cells, ctx.nb, ctx.nf
    w, G = ctx.cell_weights, ctx.grad_phi
    fw, fphi, dn, psi = ctx.facet_weights, ctx.facet_phi, ctx.facet_dn_phi, ctx.psi
    sigma = penalty / ctx.h

    cc = np.einsum("tq,tqai,tqbi->tab", w, G, G)
    cc -= np.einsum("teq,teqa,teqb->tab", fw, fphi, dn)
    cc -= np.einsum("teq,teqa,teqb->tab", fw, dn, fphi)
    cc += sigma[:, None, None] * np.einsum("teq,teqa,teqb->tab", fw, fphi, fphi)

    cf = np.einsum("teq,teqa,qc->taec", fw, dn, psi)
    cf -= sigma[:, None, None, None] * np.einsum("teq,teqa,qc->taec", fw, fphi, psi)
    cf = cf.reshape(T, nb, 3 * nf)

    ff = sigma[:, None, None, None] * np.einsum("teq,qc,qd->tecd", fw, psi, psi)
    return _hybrid(cc, cf, np.transpose(cf, (0, 2, 1)), _block_diagonal(ff))


def advecting_velocity(ctx, w_coeffs):
    """Cell values and facet normal flux (cell trace) of the advecting field."""
    w_coeffs = np.asarray(w_coeffs)
    w_cell = ctx.cell_values(w_coeffs)
    wn = np.einsum("teqi,tei->teq", ctx.facet_values(w_coeffs), ctx.normals)
    return w_cell, wn


def scalar_convection(ctx, w_coeffs):
    """Hybrid block of o_h(w; ., .) for one scalar component."""
    T, nb, nf = ctx.n_cells, ctx.nb, ctx.nf
    w_cell, wn = advecting_velocity(ctx, w_coeffs)
    fw, fphi, psi = ctx.facet_weights, ctx.facet_phi, ctx.psi
    inflow = 0.5 * (wn - np.abs(wn))
    outflow = 0.5 * (wn + np.abs(wn))

    transport = np.einsum("tqi,tqai->tqa", w_cell, ctx.grad_phi)
    cc = -np.einsum("tq,qb,tqa->tab", ctx.cell_weights, ctx.phi, transport)
    cc += np.einsum("teq,teq,teqa,teqb->tab", fw, outflow, fphi, fphi)
    cf = np.einsum("teq,teq,teqa,qc->taec", fw, inflow, fphi, psi).reshape(T, nb, 3 * nf)
    fc = -np.einsum("teq,teq,teqb,qc->tecb", fw, outflow, fphi, psi).reshape(T, 3 * nf, nb)
    ff = -np.einsum("teq,teq,qc,qd->tecd", fw, inflow, psi, psi)
    return _hybrid(cc, cf, fc, _block_diagonal(ff))


def facet_upwind_coupling(ctx, w_coeffs):
    """
    Trace-trace coupling of o_h summed over both owners, per facet: (F, nf, nf).

    Weight max(-w.n, 0) from each side; zero where w.n vanishes on the facet.
    """
    _, wn = advecting_velocity(ctx, w_coeffs)
    per_cell = np.einsum("teq,teq,qc,qd->tecd", ctx.facet_weights, np.maximum(-wn, 0.0), ctx.psi, ctx.psi)
    out = np.zeros((ctx.mesh.n_facets, ctx.nf, ctx.nf))
    np.add.at(out, ctx.cell_facets, per_cell)
    return out


# ============================================
# SCHEME TERMS
# ============================================

def _velocity_hybrid_indices(ctx):
    return [ctx.hybrid_index(ctx.u_cell[:, i], ctx.u_hat[:, :, i]) for i in range(2)]


def _conformation_hybrid_indices(ctx):
    return [ctx.hybrid_index(ctx.C_cell[:, m], ctx.C_hat[:, :, m]) for m in range(3)]


def _restrict(block, cells):
    return block if cells is None else block.select(cells)


def local_viscous(ctx, params, cells=None):
    """a_h on (u, û) x (u, û); symmetric, penalty nu*alpha/h_K."""
    scalar = params.nu * scalar_diffusion(ctx, params.alpha)
    idx = _velocity_hybrid_indices(ctx)
    return _restrict(_component_block([scalar, scalar], idx, idx), cells)


def local_conformation_diffusion(ctx, params, cells=None):
    """A_h on (C, Ĉ) x (C, Ĉ); every entry carries epsilon."""
    scalar = params.epsilon * scalar_diffusion(ctx, params.beta)
    idx = _conformation_hybrid_indices(ctx)
    return _restrict(_component_block([wt * scalar for wt in FROBENIUS_WEIGHTS], idx, idx), cells)


def local_convection(ctx, w_coeffs, field="velocity", cells=None):
    """
    o_h(w; ., .) with w = cell coefficients (T, 2, nb) of the lagged velocity.

    field="velocity" acts on (u, û); field="conformation" on every (C_m, Ĉ_m).
    """
    scalar = scalar_convection(ctx, w_coeffs)
    if field == "velocity":
        idx = _velocity_hybrid_indices(ctx)
        blocks = [scalar, scalar]
    elif field == "conformation":
        idx = _conformation_hybrid_indices(ctx)
        blocks = [wt * scalar for wt in FROBENIUS_WEIGHTS]
    else:
        raise ValueError(f"Unknown field '{field}' (expected 'velocity' or 'conformation')")
    return _restrict(_component_block(blocks, idx, idx), cells)


def local_pressure(ctx, cells=None):
    """
    b_h with rows (q, q̂) and columns (u, û).

    b_h((q, q̂), (u, û)) = -(q, div u)_K + <(u - û).n, q̂>_dK
    The momentum rows use the transpose of the same block.
    """
    T, nb, nf, npb = ctx.n_cells, ctx.nb, ctx.nf, ctx.npb
    fw, fphi, psi, n = ctx.facet_weights, ctx.facet_phi, ctx.psi, ctx.normals
    rows = np.concatenate([ctx.p_cell, ctx.p_hat], axis=1)
    values = np.zeros((T, npb + 3 * nf, 2 * ctx.n_hybrid))

    for i in range(2):
        c0 = i * ctx.n_hybrid
        values[:, :npb, c0:c0 + nb] = -np.einsum("tq,qa,tqb->tab", ctx.cell_weights, ctx.chi, ctx.grad_phi[..., i])
        values[:, npb:, c0:c0 + nb] = np.einsum(
            "teq,qc,teqb,te->tecb", fw, psi, fphi, n[..., i]
        ).reshape(T, 3 * nf, nb)
        values[:, npb:, c0 + nb:c0 + ctx.n_hybrid] = -_block_diagonal(
            np.einsum("teq,qc,qd,te->tecd", fw, psi, psi, n[..., i])
        )

    cols = np.concatenate(_velocity_hybrid_indices(ctx), axis=1)
    return _restrict(LocalBlock(values, rows, cols), cells)


def local_mean_constraint(ctx, cells=None):
    """Multiplier row against cell pressures: weights are the integrals of the pressure basis."""
    moments = np.einsum("tq,qa->ta", ctx.cell_weights, ctx.chi)
    rows = np.full((ctx.n_cells, 1), ctx.layout.multiplier, dtype=np.int64)
    return _restrict(LocalBlock(moments[:, None, :], rows, ctx.p_cell), cells)


def local_mass(ctx, params, cells=None):
    """tau^-1 consistent mass on u and (Frobenius-weighted) on C."""
    mass = scalar_mass(ctx) / params.tau
    u_idx = [ctx.u_cell[:, i] for i in range(2)]
    C_idx = [ctx.C_cell[:, m] for m in range(3)]
    velocity = _component_block([mass, mass], u_idx, u_idx)
    conformation = _component_block([wt * mass for wt in FROBENIUS_WEIGHTS], C_idx, C_idx)
    return [_restrict(velocity, cells), _restrict(conformation, cells)]


def _conformation_times_gradient(ctx, C_prev):
    """(C^n grad phi_b) at cell quadrature points: (T, nq, nb, 2)."""
    C_full = sym_to_full(ctx.cell_values(C_prev))
    return np.einsum("tqij,tqbj->tqbi", C_full, ctx.grad_phi)


def local_elastic_coupling_momentum(ctx, C_prev, include_facets=True, cells=None):
    """
    Momentum rows (v, v̂) against the trace of C^{n+1} (columns C11 and C22).

    +(trC C^n, grad v)_K - <trC C^n n, v - v̂>_dK
    """
    T, nb, nf = ctx.n_cells, ctx.nb, ctx.nf
    C_prev = np.asarray(C_prev)
    C_grad = _conformation_times_gradient(ctx, C_prev)
    Cn_n = np.einsum("teqij,tej->teqi", sym_to_full(ctx.facet_values(C_prev)), ctx.normals)
    fw, fphi, psi = ctx.facet_weights, ctx.facet_phi, ctx.psi

    per_component = []
    for i in range(2):
        cell_rows = np.einsum("tq,qb,tqa->tab", ctx.cell_weights, ctx.phi, C_grad[..., i])
        hat_rows = np.zeros((T, 3 * nf, nb))
        if include_facets:
            cell_rows -= np.einsum("teq,teqb,teq,teqa->tab", fw, fphi, Cn_n[..., i], fphi)
            hat_rows = np.einsum("teq,teqb,teq,qc->tecb", fw, fphi, Cn_n[..., i], psi).reshape(T, 3 * nf, nb)
        block = np.concatenate([cell_rows, hat_rows], axis=1)
        per_component.append(np.concatenate([block, block], axis=2))

    values = np.concatenate(per_component, axis=1)
    rows = np.concatenate(_velocity_hybrid_indices(ctx), axis=1)
    cols = np.concatenate([ctx.C_cell[:, 0], ctx.C_cell[:, 2]], axis=1)
    return _restrict(LocalBlock(values, rows, cols), cells)


def local_elastic_coupling_conformation(ctx, C_prev, cells=None):
    """
    Two blocks on the conformation rows:

    (a) -((grad u^{n+1}) C^n + C^n (grad u^{n+1})^T) : D   columns u
    (b) +(trC^n)^2 C^{n+1} : D                            columns C
    """
    T, nb = ctx.n_cells, ctx.nb
    C_prev = np.asarray(C_prev)
    g = _conformation_times_gradient(ctx, C_prev)
    m0 = np.einsum("tq,qa,tqb->tab", ctx.cell_weights, ctx.phi, g[..., 0])
    m1 = np.einsum("tq,qa,tqb->tab", ctx.cell_weights, ctx.phi, g[..., 1])

    # rows C11, C12 (weight 2), C22; columns u1, u2
    coupling = np.zeros((T, 3 * nb, 2 * nb))
    coupling[:, 0:nb, 0:nb] = -2.0 * m0
    coupling[:, nb:2 * nb, 0:nb] = -2.0 * m1
    coupling[:, nb:2 * nb, nb:2 * nb] = -2.0 * m0
    coupling[:, 2 * nb:, nb:2 * nb] = -2.0 * m1
    C_rows = ctx.C_cell.reshape(T, -1)
    block_a = LocalBlock(coupling, C_rows, ctx.u_cell.reshape(T, -1))

    Cq = ctx.cell_values(C_prev)
    trace_sq = (Cq[..., 0] + Cq[..., 2]) ** 2
    weighted = scalar_mass(ctx, trace_sq)
    C_idx = [ctx.C_cell[:, m] for m in range(3)]
    block_b = _component_block([wt * weighted for wt in FROBENIUS_WEIGHTS], C_idx, C_idx)
    return _restrict(block_a, cells), _restrict(block_b, cells)


def local_rhs(ctx, state_n, t_next, params, forcing=None, cells=None):
    """
    Right-hand side moments on the cell rows of u and C.

    tau^-1 M u^n + (f, v)  and  tau^-1 M C^n : D + (F, D) + (trC^n I, D).
    Hat and pressure rows receive nothing. `forcing(points, t)` returns
    (f, F) with shapes (n, 2) and (n, 3); None means zero forcing.
    """
    T = ctx.n_cells
    w, phi = ctx.cell_weights, ctx.phi
    mass = scalar_mass(ctx)
    u_n, C_n = state_n.u, state_n.C

    u_rows = np.einsum("tab,tib->tia", mass, u_n) / params.tau
    C_rows = np.einsum("tab,tmb->tma", mass, C_n) / params.tau

    if forcing is not None:
        f, F = forcing(ctx.cell_points.reshape(-1, 2), t_next)
        f = np.asarray(f, dtype=float).reshape(T, -1, 2)
        F = np.asarray(F, dtype=float).reshape(T, -1, 3)
        u_rows += np.einsum("tq,qa,tqi->tia", w, phi, f)
        C_rows += np.einsum("tq,qa,tqm->tma", w, phi, F)

    C_rows *= FROBENIUS_WEIGHTS[None, :, None]
    Cq = ctx.cell_values(C_n)
    trace_moments = np.einsum("tq,qa,tq->ta", w, phi, Cq[..., 0] + Cq[..., 2])
    C_rows[:, 0] += trace_moments
    C_rows[:, 2] += trace_moments

    values = np.concatenate([u_rows.reshape(T, -1), C_rows.reshape(T, -1)], axis=1)
    rows = np.concatenate([ctx.u_cell.reshape(T, -1), ctx.C_cell.reshape(T, -1)], axis=1)
    vector = LocalVector(values, rows)
    return vector if cells is None else vector.select(cells)
