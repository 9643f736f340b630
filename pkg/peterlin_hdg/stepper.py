"""
Semi-implicit time stepping: one monolithic sparse solve per step.

Each step solves for (u, û, p, p̂, C, Ĉ)^{n+1} and the pressure-mean
multiplier together. The terms that do not depend on the previous state
(mass, viscous and conformation diffusion, pressure coupling and the
mean constraint) are assembled once per run. The convection and elastic
couplings are rebuilt every step from (u^n, C^n).
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .exceptions import BlowUpError, StepFailureError
from .forms import (
    FormContext,
    ModelParams,
    assemble,
    assemble_vector,
    facet_upwind_coupling,
    advecting_velocity,
    local_conformation_diffusion,
    local_convection,
    local_elastic_coupling_conformation,
    local_elastic_coupling_momentum,
    local_mass,
    local_mean_constraint,
    local_pressure,
    local_rhs,
    local_viscous,
)
from .mesh import unit_square_mesh
from .monitor import EnergyMonitor
from .spaces import FROBENIUS_WEIGHTS, State, build_layout, project_initial
from .verification import case_for, spd_diagnostics, spd_sample_points

logger = logging.getLogger(__name__)

RESIDUAL_RTOL = 1e-10
RESIDUAL_ATOL = 1e-12
REGULARIZATION = 1e-12
DECOUPLING_TOLERANCE = 1e-10


# ============================================
# SYSTEM ASSEMBLY
# ============================================

@dataclass
class StepSystem:
    """Assembled linear system of one time step."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    layout: object
    t: float
    pressure_moments: np.ndarray
    regularized_facets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        n = self.layout.total
        if self.matrix.shape != (n, n) or self.rhs.shape != (n,):
            raise ValueError(f"System shape {self.matrix.shape} / {self.rhs.shape} does not match layout total {n}")

    @property
    def multiplier_index(self):
        return self.layout.multiplier


def static_operator(ctx, params):
    """Step-independent part of the left-hand side."""
    pressure = local_pressure(ctx)
    mean = local_mean_constraint(ctx)
    blocks = [
        *local_mass(ctx, params),
        local_viscous(ctx, params),
        pressure,
        pressure.transpose(),
        mean,
        mean.transpose(),
    ]
    if params.epsilon > 0:
        blocks.append(local_conformation_diffusion(ctx, params))
    return assemble(blocks, ctx.layout.total)


def decoupled_trace_facets(ctx, w_coeffs, tolerance=DECOUPLING_TOLERANCE):
    """
    Facets whose Ĉ unknowns the upwind terms leave undetermined.

    A facet is flagged when the smallest eigenvalue of its trace-trace
    upwind coupling is at most tolerance * |F| * max(1, max |w.n|).
    """
    coupling = facet_upwind_coupling(ctx, w_coeffs)
    smallest = np.linalg.eigvalsh(coupling)[:, 0]
    _, wn = advecting_velocity(ctx, w_coeffs)
    scale = max(1.0, float(np.abs(wn).max())) if wn.size else 1.0
    return np.flatnonzero(smallest <= tolerance * ctx.mesh.facet_lengths * scale)


def _trace_regularization(ctx, facets, theta):
    """theta times the Frobenius-weighted facet mass on every Ĉ component of `facets`."""
    reference = np.einsum("q,qc,qd->cd", ctx.facet_rule.weights, ctx.psi, ctx.psi)
    idx = ctx.layout.facet_Chat[facets]  # (n, 3, nf)
    lengths = ctx.mesh.facet_lengths[facets]
    nf = ctx.nf
    values = theta * lengths[:, None, None, None] * FROBENIUS_WEIGHTS[None, :, None, None] * reference[None, None]
    rows = np.broadcast_to(idx[..., :, None], idx.shape + (nf,))
    cols = np.broadcast_to(idx[..., None, :], idx.shape + (nf,))
    size = ctx.layout.total
    return sp.coo_matrix((values.ravel(), (rows.ravel(), cols.ravel())), shape=(size, size)).tocsr()


def assemble_step(ctx, params, state_n, t_next, forcing=None, static=None, regularization=REGULARIZATION):
    """
    Build the system for t^{n+1} = t_next from the state at t^n.

    `static` is the output of static_operator (rebuilt when omitted). With
    epsilon = 0 the Ĉ rows of facets that carry no upwind information are
    replaced by a tiny facet mass term so the system stays nonsingular.
    """
    layout = ctx.layout
    if static is None:
        static = static_operator(ctx, params)
    u_n, C_n = state_n.u, state_n.C

    transport = local_convection(ctx, u_n, field="conformation")
    regularized = np.zeros(0, dtype=np.int64)
    if params.epsilon == 0 and regularization > 0:
        regularized = decoupled_trace_facets(ctx, u_n)
        if len(regularized):
            flagged = np.isin(transport.rows, layout.facet_Chat[regularized].ravel())
            transport.values[flagged] = 0.0
            logger.warning(
                f"⚠️ Regularizing {len(regularized)} decoupled conformation trace facet(s) at t={t_next:.6g}"
            )

    coupling_a, coupling_b = local_elastic_coupling_conformation(ctx, C_n)
    dynamic = assemble(
        [
            local_convection(ctx, u_n, field="velocity"),
            transport,
            local_elastic_coupling_momentum(ctx, C_n),
            coupling_a,
            coupling_b,
        ],
        layout.total,
    )
    matrix = static + dynamic
    if len(regularized):
        matrix = matrix + _trace_regularization(ctx, regularized, regularization)

    rhs = assemble_vector(local_rhs(ctx, state_n, t_next, params, forcing), layout.total)
    moments = np.einsum("tq,qa->ta", ctx.cell_weights, ctx.chi)
    return StepSystem(matrix.tocsr(), rhs, layout, t_next, moments, regularized)


# ============================================
# SOLVE
# ============================================

def _cell_blocks(matrix, cell_dofs):
    """Dense per-cell blocks of the cell-cell submatrix, which is block diagonal."""
    T, n_local = cell_dofs.shape
    sub = matrix[cell_dofs.ravel()][:, cell_dofs.ravel()].tocoo()
    cell_r, cell_c = sub.row // n_local, sub.col // n_local
    if np.any(cell_r != cell_c):
        raise StepFailureError("Static condensation needs a block-diagonal cell block; cell unknowns of different cells are coupled")
    blocks = np.zeros((T, n_local, n_local))
    np.add.at(blocks, (cell_r, sub.row % n_local, sub.col % n_local), sub.data)
    return blocks


def condensed_solve(matrix, rhs, layout):
    """
    Eliminate cell unknowns cell by cell and solve the trace + multiplier system.

        S = A_FF - A_FI A_II^-1 A_IF,   x_I = A_II^-1 (b_I - A_IF x_F)
    """
    cell_dofs = layout.cell_dofs()
    T, n_local = cell_dofs.shape
    interior = cell_dofs.ravel()
    trace = np.setdiff1d(np.arange(layout.total), interior)

    inverse = np.linalg.inv(_cell_blocks(matrix, cell_dofs))
    A_II_inv = sp.bsr_matrix((inverse, np.arange(T), np.arange(T + 1)), shape=(T * n_local, T * n_local)).tocsr()

    rows_I = matrix[interior]
    rows_F = matrix[trace]
    A_IF = rows_I[:, trace]
    A_FI = rows_F[:, interior]
    A_FF = rows_F[:, trace]
    b_I, b_F = rhs[interior], rhs[trace]

    schur = (A_FF - A_FI @ (A_II_inv @ A_IF)).tocsc()
    x_F = splu(schur, permc_spec="COLAMD").solve(b_F - A_FI @ (A_II_inv @ b_I))
    x_I = A_II_inv @ (b_I - A_IF @ x_F)

    x = np.empty(layout.total)
    x[interior] = x_I
    x[trace] = x_F
    return x


def solve_step(system, static_condensation=False, rtol=RESIDUAL_RTOL, atol=RESIDUAL_ATOL, step=None):
    """
    Solve one step with a sparse direct factorization.

    Returns (state, residual) where residual is relative to ||b|| when b is
    nonzero. The pressure pair (p, p̂) is shifted to zero cell mean.
    """
    A, b = system.matrix, system.rhs
    try:
        if static_condensation:
            x = condensed_solve(A, b, system.layout)
        else:
            x = splu(A.tocsc(), permc_spec="COLAMD").solve(b)
    except (RuntimeError, np.linalg.LinAlgError) as e:
        raise StepFailureError(
            f"Factorization failed at t={system.t:.6g}: {e}", step=step, time=system.t
        ) from e

    if not np.all(np.isfinite(x)):
        raise StepFailureError(f"Non-finite solution at t={system.t:.6g}", step=step, time=system.t)

    absolute = float(np.linalg.norm(A @ x - b))
    b_norm = float(np.linalg.norm(b))
    relative = absolute / b_norm if b_norm > 0 else absolute
    if not (absolute <= atol or relative <= rtol):
        raise StepFailureError(
            f"Residual {relative:.3e} above tolerance at t={system.t:.6g}",
            step=step, time=system.t, residual=relative,
        )

    state = State(system.layout, x, system.t)
    layout = system.layout
    mean = float(np.sum(system.pressure_moments * state.p) / np.sum(system.pressure_moments))
    state.vector[layout.blocks["p"]] -= mean
    state.vector[layout.blocks["phat"]] -= mean
    return state, relative


# ============================================
# DIAGNOSTICS
# ============================================

@dataclass
class StepDiagnostics:
    step: int
    time: float
    divergence_residual: float
    jump_residual: float
    boundary_flux_residual: float
    u_l2_sq: float
    trC_l2_sq: float
    u_increment_sq: float
    trC_increment_sq: float
    viscous_sq: float
    velocity_jump_sq: float
    eps_trC_grad_sq: float
    conformation_jump_sq: float
    upwind_u: float
    upwind_trC: float
    trace_product_sq: float
    forcing_l2_sq: float
    min_det_C: float
    min_C11: float
    min_C22: float
    solver_residual: float
    regularized_facets: int = 0

    def as_dict(self):
        return asdict(self)


def _trace(C):
    return C[..., 0] + C[..., 2]


def _facet_normal_flux(ctx, state):
    """Per facet sum over owners of u.n at facet quadrature points: (F, nqf)."""
    un = np.einsum("teqi,tei->teq", ctx.facet_values(state.u), ctx.normals)
    flux = np.zeros((ctx.mesh.n_facets, un.shape[2]))
    np.add.at(flux, ctx.cell_facets, un)
    return flux


def compute_diagnostics(ctx, params, state, previous, step, residual, forcing=None,
                        regularized=0, spd_points=None):
    """Mass conservation residuals, energy terms and conformation positivity of one step."""
    mesh, tau = ctx.mesh, params.tau
    w, fw = ctx.cell_weights, ctx.facet_weights
    inv_h = 1.0 / ctx.h

    grad_u = ctx.cell_gradients(state.u)
    divergence = grad_u[..., 0, 0] + grad_u[..., 1, 1]
    divergence_residual = math.sqrt(float(np.max(np.sum(w * divergence ** 2, axis=1))))

    flux = _facet_normal_flux(ctx, state)
    facet_w = ctx.facet_rule.weights[None, :] * mesh.facet_lengths[:, None]
    facet_norms = np.sqrt(np.sum(facet_w * flux ** 2, axis=1))
    jump_residual = float(facet_norms[mesh.interior_facets].max()) if len(mesh.interior_facets) else 0.0
    boundary_flux_residual = float(facet_norms[mesh.boundary_facets].max())

    u_cell = ctx.cell_values(state.u)
    trC = _trace(ctx.cell_values(state.C))
    trC_prev = _trace(ctx.cell_values(previous.C))
    du = u_cell - ctx.cell_values(previous.u)

    grad_trC = _trace(np.moveaxis(ctx.cell_gradients(state.C), 2, -1))
    u_jump = ctx.facet_values(state.u) - ctx.hat_values(state.uhat)
    trC_jump = _trace(ctx.facet_values(state.C)) - _trace(ctx.hat_values(state.Chat))
    _, wn = advecting_velocity(ctx, previous.u)

    forcing_l2_sq = 0.0
    if forcing is not None:
        f, _ = forcing(ctx.cell_points.reshape(-1, 2), state.t)
        f = np.asarray(f, dtype=float).reshape(w.shape + (2,))
        forcing_l2_sq = float(np.sum(w[..., None] * f ** 2))

    if spd_points is not None:
        spd = spd_diagnostics(mesh, ctx.layout, state, spd_points)
        min_det, min_C11, min_C22 = spd.min_det, spd.min_C11, spd.min_C22
    else:
        min_det = min_C11 = min_C22 = float("nan")

    return StepDiagnostics(
        step=step,
        time=state.t,
        divergence_residual=divergence_residual,
        jump_residual=jump_residual,
        boundary_flux_residual=boundary_flux_residual,
        u_l2_sq=float(np.sum(w[..., None] * u_cell ** 2)),
        trC_l2_sq=float(np.sum(w * trC ** 2)),
        u_increment_sq=float(np.sum(w[..., None] * du ** 2)),
        trC_increment_sq=float(np.sum(w * (trC - trC_prev) ** 2)),
        viscous_sq=tau * params.nu * float(np.sum(w[..., None, None] * grad_u ** 2)),
        velocity_jump_sq=tau * params.nu * float(np.sum(inv_h[:, None, None, None] * fw[..., None] * u_jump ** 2)),
        eps_trC_grad_sq=tau * params.epsilon * float(np.sum(w[..., None] * grad_trC ** 2)),
        conformation_jump_sq=tau * params.epsilon * float(np.sum(inv_h[:, None, None] * fw * trC_jump ** 2)),
        upwind_u=tau * float(np.sum(fw[..., None] * np.abs(wn)[..., None] * u_jump ** 2)),
        upwind_trC=tau * float(np.sum(fw * np.abs(wn) * trC_jump ** 2)),
        trace_product_sq=tau * float(np.sum(w * (trC * trC_prev) ** 2)),
        forcing_l2_sq=forcing_l2_sq,
        min_det_C=min_det,
        min_C11=min_C11,
        min_C22=min_C22,
        solver_residual=residual,
        regularized_facets=int(regularized),
    )


# ============================================
# TIME LOOP
# ============================================

class SemiImplicitStepper:
    """Advances a state by one step at a time, caching the static operator."""

    def __init__(self, ctx, params, forcing=None, static_condensation=False, regularization=REGULARIZATION,
                 rtol=RESIDUAL_RTOL, atol=RESIDUAL_ATOL, spd_points=None):
        self.ctx = ctx
        self.params = params
        self.forcing = forcing
        self.static_condensation = static_condensation
        self.regularization = regularization
        self.rtol = rtol
        self.atol = atol
        self.spd_points = spd_points
        self.static = static_operator(ctx, params)

    def step(self, state_n, n, t_next):
        system = assemble_step(
            self.ctx, self.params, state_n, t_next, self.forcing,
            static=self.static, regularization=self.regularization,
        )
        state, residual = solve_step(
            system, static_condensation=self.static_condensation, rtol=self.rtol, atol=self.atol, step=n + 1
        )
        diagnostics = compute_diagnostics(
            self.ctx, self.params, state, state_n, n + 1, residual,
            forcing=self.forcing, regularized=len(system.regularized_facets), spd_points=self.spd_points,
        )
        return state, diagnostics


@dataclass
class RunResult:
    label: str
    params: ModelParams
    mesh: object
    layout: object
    case: object
    diagnostics: list
    final_state: State
    stored_states: dict
    monitor_report: dict
    regularization_count: int

    @property
    def steps(self):
        return len(self.diagnostics)

    @property
    def frame(self):
        return pd.DataFrame([d.as_dict() for d in self.diagnostics])


def _dump_steps(dump_times, final_time, steps):
    """Map each requested dump time to the nearest step index."""
    out = {}
    for t in dump_times or []:
        n = int(round(float(t) / final_time * steps))
        out[min(max(n, 0), steps)] = float(t)
    return out


def run(config, mesh_level=None, steps=None, label=None):
    """
    Run one simulation of `config` on a unit-square mesh.

    mesh_level and steps override the config (sweeps pass them per point).
    On a step failure or blow-up the exception is re-raised with a
    `partial_result` attribute holding everything computed so far.
    """
    level = config.mesh_level if mesh_level is None else mesh_level
    n_steps = config.steps if steps is None else steps
    tau = config.final_time / n_steps
    params = ModelParams(nu=config.nu, epsilon=config.epsilon, alpha=config.alpha, beta=config.beta, tau=tau)
    label = label or f"level{level}_N{n_steps}"

    mesh = unit_square_mesh(level)
    layout = build_layout(mesh, config.degree)
    ctx = FormContext(mesh, layout)
    case = case_for(config.experiment, config.case)
    forcing = case.forcing_function(params.nu, params.epsilon)
    toggles, solver = config.toggles, config.solver

    logger.info(
        f"🧮 Run {label}: {case.name}, h=2^-{level}, k={layout.degree}, N={n_steps}, "
        f"tau={tau:.6g}, {layout.total:,} unknowns"
    )

    stepper = SemiImplicitStepper(
        ctx, params, forcing,
        static_condensation=toggles.static_condensation,
        regularization=solver.regularization,
        rtol=solver.residual_rtol,
        atol=solver.residual_atol,
        spd_points=spd_sample_points(layout.degree) if toggles.spd_diagnostics else None,
    )
    monitor = EnergyMonitor(bound=solver.blowup_bound, accumulate=toggles.energy_monitor)

    state = project_initial(mesh, layout, case.initial_velocity, case.initial_conformation)
    monitor.start(state, ctx)
    dumps = _dump_steps(config.dump_times, config.final_time, n_steps) if toggles.store_fields else {}
    stored = {dumps[0]: state.copy()} if 0 in dumps else {}
    history = []
    regularizations = 0

    def partial():
        return RunResult(label, params, mesh, layout, case, history, state, stored,
                         monitor.report(), regularizations)

    for n in range(n_steps):
        t_next = (n + 1) * config.final_time / n_steps
        try:
            new_state, diagnostics = stepper.step(state, n, t_next)
            history.append(diagnostics)
            regularizations += diagnostics.regularized_facets
            monitor.check(diagnostics, params)
        except (StepFailureError, BlowUpError) as e:
            logger.error(f"❌ Run {label} stopped at step {n + 1}: {e}")
            e.partial_result = partial()
            raise
        state = new_state
        if n + 1 in dumps:
            stored[dumps[n + 1]] = state.copy()
        logger.debug(
            f"step {n + 1}/{n_steps} t={t_next:.4f} residual={diagnostics.solver_residual:.2e} "
            f"div={diagnostics.divergence_residual:.2e}"
        )

    result = partial()
    logger.info(
        f"✅ Run {label} finished: {n_steps} steps, "
        f"max residual {max((d.solver_residual for d in history), default=0.0):.2e}, "
        f"{regularizations} regularized facet-steps"
    )
    return result
