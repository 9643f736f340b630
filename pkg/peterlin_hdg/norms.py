"""
Mesh-dependent norms of hybrid pairs.

    |||(v, v̂)|||_v^2  = sum_K ||grad v||_K^2 + alpha/h_K ||v - v̂||_dK^2
    |||(D, D̂)|||_w^2  = same with beta, Frobenius products
    |||(q, q̂)|||_q^2  = ||q||^2 + sum_K h_K ||q̂||_dK^2
    |||(v, v̂)|||_0v^2 = ||v||^2 + sum_K h_K ||v̂||_dK^2
    ||v||_1           = |||(v, {v})|||_v with {v} the facet average (0 on the boundary)

Cell fields are (T, m, nb) coefficient arrays, facet fields (F, m, nf).
"""

import math

import numpy as np

from .forms import assemble, local_viscous
from .spaces import FROBENIUS_WEIGHTS


def _weighted_triple(ctx, cell, hat, penalty, weights):
    grads = ctx.cell_gradients(cell)
    jump = ctx.facet_values(cell) - ctx.hat_values(hat)
    volume = np.sum(ctx.cell_weights[..., None, None] * weights[:, None] * grads ** 2)
    facet = np.sum((penalty / ctx.h)[:, None, None, None] * ctx.facet_weights[..., None] * weights * jump ** 2)
    return math.sqrt(volume + facet)


def velocity_triple_norm(ctx, u, uhat, alpha):
    return _weighted_triple(ctx, u, uhat, alpha, np.ones(2))


def conformation_triple_norm(ctx, C, Chat, beta):
    return _weighted_triple(ctx, C, Chat, beta, FROBENIUS_WEIGHTS)


def pressure_triple_norm(ctx, p, phat):
    """phat is (F, nf)."""
    cell = np.sum(ctx.cell_weights * ctx.pressure_values(p) ** 2)
    hat = ctx.hat_values(phat[:, None, :])[..., 0]
    facet = np.sum(ctx.h[:, None, None] * ctx.facet_weights * hat ** 2)
    return math.sqrt(cell + facet)


def zero_triple_norm(ctx, u, uhat):
    cell = np.sum(ctx.cell_weights[..., None] * ctx.cell_values(u) ** 2)
    facet = np.sum(ctx.h[:, None, None, None] * ctx.facet_weights[..., None] * ctx.hat_values(uhat) ** 2)
    return math.sqrt(cell + facet)


def facet_average(ctx, cell):
    """L2 projection onto the facet space of the average of both traces; zero on boundary facets."""
    mesh = ctx.mesh
    traces = ctx.facet_values(cell)  # (T, 3, q, m)
    moments = np.einsum("teq,qc,teqm->temc", ctx.facet_weights, ctx.psi, traces)
    rhs = np.zeros((mesh.n_facets,) + moments.shape[2:])
    np.add.at(rhs, ctx.cell_facets, 0.5 * moments)
    rhs[mesh.boundary_mask] = 0.0

    reference = np.einsum("q,qc,qd->cd", ctx.facet_rule.weights, ctx.psi, ctx.psi)
    coeffs = np.linalg.solve(reference, rhs.transpose(2, 0, 1).reshape(ctx.nf, -1))
    coeffs = coeffs.reshape(ctx.nf, mesh.n_facets, -1).transpose(1, 2, 0)
    return coeffs / mesh.facet_lengths[:, None, None]


def broken_h1_norm(ctx, u, alpha):
    return velocity_triple_norm(ctx, u, facet_average(ctx, u), alpha)


def continuity_constant(ctx, params, rng, samples=20):
    """
    Empirical bound of |a_h(x, y)| / (nu |||x|||_v |||y|||_v) over random hybrid pairs.

    Each sample draws independent velocity coefficients on cells and
    interior facets.
    """
    layout = ctx.layout
    matrix = assemble(local_viscous(ctx, params), layout.total)
    worst = 0.0
    for _ in range(samples):
        x = np.zeros(layout.total)
        y = np.zeros(layout.total)
        for vec in (x, y):
            vec[layout.blocks["u"]] = rng.standard_normal(layout.block_size("u"))
            vec[layout.blocks["uhat"]] = rng.standard_normal(layout.block_size("uhat"))
        norm_x = _velocity_norm_of(ctx, layout, x, params.alpha)
        norm_y = _velocity_norm_of(ctx, layout, y, params.alpha)
        worst = max(worst, abs(y @ (matrix @ x)) / (params.nu * norm_x * norm_y))
    return worst


def _velocity_norm_of(ctx, layout, vector, alpha):
    u = vector[layout.cell_u]
    idx = layout.facet_uhat
    uhat = np.where(idx >= 0, vector[np.maximum(idx, 0)], 0.0)
    return velocity_triple_norm(ctx, u, uhat, alpha)
