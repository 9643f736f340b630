import math

import numpy as np
import pytest

from peterlin_hdg.forms import ModelParams, assemble, local_viscous
from peterlin_hdg.norms import (
    broken_h1_norm,
    conformation_triple_norm,
    continuity_constant,
    facet_average,
    pressure_triple_norm,
    velocity_triple_norm,
    zero_triple_norm,
)
from peterlin_hdg.spaces import State, project_initial


def random_state(layout, rng):
    return State(layout, rng.standard_normal(layout.total))


def test_facet_average_of_continuous_field(ctx4):
    def field(x):
        return np.column_stack([1.0 + x[:, 0] - 2.0 * x[:, 1], 0.5 * x[:, 1]])

    state = project_initial(ctx4.mesh, ctx4.layout, field, lambda x: np.zeros((len(x), 3)))
    average = facet_average(ctx4, state.u)
    assert average.shape == (ctx4.mesh.n_facets, 2, ctx4.nf)
    assert np.all(average[ctx4.mesh.boundary_facets] == 0)

    seen = ctx4.hat_values(average)
    traces = ctx4.facet_values(state.u)
    interior = ~ctx4.mesh.boundary_mask[ctx4.cell_facets]
    np.testing.assert_allclose(seen[interior], traces[interior], atol=1e-12)


def test_broken_norm_bounded_by_triple_norm(ctx4, rng):
    for _ in range(10):
        state = random_state(ctx4.layout, rng)
        triple = velocity_triple_norm(ctx4, state.u, state.uhat, 8.0)
        assert broken_h1_norm(ctx4, state.u, 8.0) <= math.sqrt(2.0) * triple


def test_triple_norms_vanish_on_matching_constants(ctx4):
    state = State.zeros(ctx4.layout)
    state.set_field("C", np.array([1.0, -2.0, 3.0])[None, :, None])
    state.set_field("Chat", np.array([1.0, -2.0, 3.0])[None, :, None])
    assert conformation_triple_norm(ctx4, state.C, state.Chat, 10.0) == pytest.approx(0.0, abs=1e-12)
    assert conformation_triple_norm(ctx4, state.C, np.zeros_like(state.Chat), 10.0) > 0


def test_pressure_norm_of_constants(ctx4):
    mesh = ctx4.mesh
    state = State.zeros(ctx4.layout)
    state.set_field("p", 1.0)
    state.set_field("phat", 1.0)
    perimeters = mesh.facet_lengths[mesh.cell_facets].sum(axis=1)
    expected = math.sqrt(1.0 + np.sum(mesh.cell_diameters * perimeters))
    assert pressure_triple_norm(ctx4, state.p, state.phat) == pytest.approx(expected)


def test_zero_norm_counts_interior_traces(ctx4):
    mesh = ctx4.mesh
    state = State.zeros(ctx4.layout)
    state.set_field("u", 1.0)
    state.set_field("uhat", 1.0)
    interior = ~mesh.boundary_mask[mesh.cell_facets]
    lengths = mesh.facet_lengths[mesh.cell_facets] * interior
    expected = math.sqrt(2.0 + 2.0 * np.sum(mesh.cell_diameters * lengths.sum(axis=1)))
    assert zero_triple_norm(ctx4, state.u, state.uhat) == pytest.approx(expected)


def test_continuity_constant_is_moderate(ctx4, params, rng):
    constant = continuity_constant(ctx4, params, rng, samples=10)
    assert 0.0 < constant < 5.0


def test_viscous_form_is_coercive_for_large_penalty(ctx4, rng):
    """a_h(x, x) >= nu (1 - c/alpha) ||grad x||^2 with c the discrete trace constant of P1 gradients."""
    mesh = ctx4.mesh
    params = ModelParams(nu=0.7, epsilon=1.0, alpha=8.0, beta=10.0, tau=0.1)
    lengths = mesh.facet_lengths[mesh.cell_facets]
    outer = np.einsum("te,tei,tej->tij", lengths, ctx4.normals, ctx4.normals)
    trace_constant = float(np.max(ctx4.h * np.linalg.eigvalsh(outer)[:, -1] / mesh.cell_areas))
    assert trace_constant < params.alpha

    matrix = assemble(local_viscous(ctx4, params), ctx4.layout.total)
    for _ in range(20):
        state = random_state(ctx4.layout, rng)
        grad_sq = np.sum(ctx4.cell_weights[..., None, None] * ctx4.cell_gradients(state.u) ** 2)
        energy = state.vector @ (matrix @ state.vector)
        assert energy >= params.nu * (1.0 - trace_constant / params.alpha) * grad_sq - 1e-10
