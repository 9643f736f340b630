import numpy as np
import pytest

from peterlin_hdg.exceptions import UnsupportedDegreeError
from peterlin_hdg.spaces import DofLayout, State, build_layout, full_to_sym, project_initial, sym_to_full


def test_single_square_layout_size(unit_mesh):
    layout = build_layout(unit_mesh, 1)
    assert layout.total == 77
    sizes = {name: layout.block_size(name) for name in layout.blocks}
    assert sizes == {"u": 12, "uhat": 4, "p": 2, "phat": 10, "C": 18, "Chat": 30, "multiplier": 1}


@pytest.mark.parametrize("k", [1, 2])
def test_index_maps_cover_every_unknown_once(mesh4, k):
    layout = build_layout(mesh4, k)
    parts = [
        layout.cell_u.ravel(),
        layout.facet_uhat[layout.facet_uhat >= 0],
        layout.cell_p.ravel(),
        layout.facet_phat.ravel(),
        layout.cell_C.ravel(),
        layout.facet_Chat.ravel(),
        [layout.multiplier],
    ]
    indices = np.sort(np.concatenate([np.asarray(p) for p in parts]))
    np.testing.assert_array_equal(indices, np.arange(layout.total))


def test_boundary_facets_carry_no_velocity_trace(mesh4):
    layout = build_layout(mesh4, 1)
    assert np.all(layout.facet_uhat[mesh4.boundary_facets] == -1)
    assert np.all(layout.facet_uhat[mesh4.interior_facets] >= 0)


def test_cell_dofs_grouped_per_cell(mesh4):
    layout = build_layout(mesh4, 2)
    dofs = layout.cell_dofs()
    assert dofs.shape == (mesh4.n_cells, 2 * 6 + 3 + 3 * 6)
    assert len(np.unique(dofs)) == dofs.size


def test_invalid_degree(unit_mesh):
    with pytest.raises(ValueError):
        DofLayout(unit_mesh, 0)


def test_state_views(mesh4):
    layout = build_layout(mesh4, 1)
    state = State(layout, np.arange(layout.total, dtype=float))
    assert state.u.shape == (mesh4.n_cells, 2, 3)
    assert state.uhat.shape == (mesh4.n_facets, 2, 2)
    assert state.C.shape == (mesh4.n_cells, 3, 3)
    assert state.Chat.shape == (mesh4.n_facets, 3, 2)
    assert np.all(state.uhat[mesh4.boundary_facets] == 0)
    assert state.multiplier == layout.total - 1


def test_set_field_ignores_constrained_entries(mesh4):
    layout = build_layout(mesh4, 1)
    state = State.zeros(layout).set_field("uhat", 3.0)
    assert np.all(state.uhat[mesh4.interior_facets] == 3.0)
    assert np.all(state.uhat[mesh4.boundary_facets] == 0.0)
    assert state.vector.sum() == pytest.approx(3.0 * layout.block_size("uhat"))


def test_state_shape_checked(unit_mesh):
    layout = build_layout(unit_mesh, 1)
    with pytest.raises(ValueError):
        State(layout, np.zeros(10))


def test_copy_is_independent(unit_mesh):
    state = State.zeros(build_layout(unit_mesh, 1), t=0.5)
    other = state.copy()
    other.vector[0] = 1.0
    assert state.vector[0] == 0.0 and other.t == 0.5


def test_symmetric_tensor_storage():
    c = np.array([[1.0, 2.0, 3.0]])
    full = sym_to_full(c)
    np.testing.assert_array_equal(full[0], [[1.0, 2.0], [2.0, 3.0]])
    np.testing.assert_array_equal(full_to_sym(full), c)


def affine_velocity(x):
    return np.column_stack([1.0 + x[:, 0] - 2.0 * x[:, 1], 0.5 * x[:, 0] - x[:, 1]])


def affine_conformation(x):
    return np.column_stack([1.0 + x[:, 0], 0.25 * x[:, 1], 2.0 - x[:, 0] + x[:, 1]])


@pytest.mark.parametrize("k", [1, 2])
def test_projection_reproduces_affine_fields(mesh4, k):
    layout = build_layout(mesh4, k)
    state = project_initial(mesh4, layout, affine_velocity, affine_conformation)
    # nodal bases: the first three coefficients are the vertex values
    vertices = mesh4.vertices[mesh4.cells].reshape(-1, 2)
    u_nodes = np.transpose(state.u[:, :, :3], (0, 2, 1)).reshape(-1, 2)
    C_nodes = np.transpose(state.C[:, :, :3], (0, 2, 1)).reshape(-1, 3)
    np.testing.assert_allclose(u_nodes, affine_velocity(vertices), atol=1e-12)
    np.testing.assert_allclose(C_nodes, affine_conformation(vertices), atol=1e-12)
    assert np.all(state.p == 0) and np.all(state.Chat == 0)


def test_projection_rejects_underintegrated_mass(mesh4):
    layout = build_layout(mesh4, 2)
    with pytest.raises(UnsupportedDegreeError):
        project_initial(mesh4, layout, affine_velocity, affine_conformation, exactness=3)
