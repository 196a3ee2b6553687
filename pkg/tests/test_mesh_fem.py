"""Mesh construction, assembly, boundary handling and direct solves."""

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from hxopt import fem
from hxopt.errors import InvalidArgumentError, SingularSystemError
from hxopt.fem import DirichletBC, apply_dirichlet, assemble, integrate_boundary, solve_linear
from hxopt.mesh import build_structured_mesh


def test_crossed_mesh_counts_1x1():
    mesh = build_structured_mesh(1, (1.0, 1.0))
    assert mesh.num_vertices == 5
    assert mesh.num_cells == 4
    assert mesh.geometry.area.sum() == pytest.approx(1.0, abs=1e-14)


def test_crossed_mesh_counts_2x2():
    mesh = build_structured_mesh(2, (1.0, 1.0))
    assert mesh.num_vertices == 13
    assert mesh.num_cells == 16
    assert mesh.geometry.area.sum() == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("n", [1, 4, 16])
def test_area_partition(n):
    mesh = build_structured_mesh(n, (1.0, 1.0))
    assert mesh.geometry.area.sum() == pytest.approx(1.0, abs=1e-12)


def test_positive_areas_and_h():
    mesh = build_structured_mesh((3, 5), (2.0, 1.0))
    assert np.all(mesh.geometry.area > 0)
    # longest edge of each crossed sub-triangle is the quad edge
    assert mesh.h.max() == pytest.approx(2.0 / 3.0)


def test_boundary_facets_unique_owner_and_tag():
    mesh = build_structured_mesh((4, 3), (1.0, 1.0))
    assert mesh.facets.shape[0] == 2 * (4 + 3)
    assert np.all(mesh.facet_cell >= 0)
    # every facet is an edge of its owning cell
    for f in range(mesh.facets.shape[0]):
        tri = set(mesh.cells[mesh.facet_cell[f]])
        assert set(mesh.facets[f]) < tri


def test_invalid_mesh_arguments():
    with pytest.raises(InvalidArgumentError):
        build_structured_mesh(0, (1.0, 1.0))
    with pytest.raises(InvalidArgumentError):
        build_structured_mesh(2, (0.0, 1.0))


def test_unknown_tag_raises():
    mesh = build_structured_mesh(2, (1.0, 1.0))
    with pytest.raises(InvalidArgumentError):
        mesh.facets_with("nonsense")


# --- assembly ---------------------------------------------------------------


def test_mass_matrix_total_is_area():
    mesh = build_structured_mesh((3, 4), (2.0, 0.5))
    m = assemble(fem.mass_kernel(), mesh)
    assert m.sum() == pytest.approx(1.0, rel=1e-13)


def test_stiffness_kills_constants():
    mesh = build_structured_mesh(4, (1.0, 1.0))
    k = assemble(fem.stiffness_kernel(), mesh)
    assert np.abs(k @ np.ones(mesh.num_vertices)).max() <= 1e-12


def test_reference_triangle_mass_matrix():
    # frozen oracle: exact integrals of P1 products over the unit triangle
    expected = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 24.0
    geom = fem.cell_geometry(np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]]))
    lam, w = fem.triangle_rule(2)
    local = fem.mass_kernel()(geom, lam, w)
    np.testing.assert_allclose(local[0], expected, atol=1e-15)


@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
@settings(max_examples=25, deadline=None)
def test_assembly_linearity(a, b):
    mesh = build_structured_mesh(3, (1.0, 1.0))
    m = assemble(fem.mass_kernel(), mesh)
    k = assemble(fem.stiffness_kernel(), mesh)

    class combo:
        degree = 2

        def __call__(self, geom, lam, w):
            return a * fem.mass_kernel()(geom, lam, w) + b * fem.stiffness_kernel()(geom, lam, w)

    c = assemble(combo(), mesh)
    diff = (c - (a * m + b * k)).toarray()
    assert np.abs(diff).max() <= 1e-12 * max(1.0, abs(a), abs(b))


@given(n=st.integers(1, 6), lx=st.floats(0.3, 3.0), ly=st.floats(0.3, 3.0))
@settings(max_examples=20, deadline=None)
def test_mass_sum_matches_volume(n, lx, ly):
    mesh = build_structured_mesh(n, (lx, ly))
    m = assemble(fem.mass_kernel(), mesh)
    assert m.sum() == pytest.approx(lx * ly, rel=1e-12)


def test_assembly_failure_on_nonfinite():
    mesh = build_structured_mesh(2, (1.0, 1.0))

    class bad:
        degree = 1

        def __call__(self, geom, lam, w):
            out = np.zeros((mesh.num_cells, 3, 3))
            out[1] = np.nan
            return out

    with pytest.raises(fem.AssemblyFailure) as err:
        assemble(bad(), mesh)
    assert err.value.cell == 1


# --- Dirichlet --------------------------------------------------------------


def test_dirichlet_identity_prescription():
    a = sp.identity(4, format="csr")
    rhs = np.zeros(4)
    ac, bc = apply_dirichlet(a, rhs, DirichletBC(dofs=[0], values=[7.0]))
    x = solve_linear(ac, bc)
    assert x[0] == pytest.approx(7.0)


def test_dirichlet_zero_everywhere():
    mesh = build_structured_mesh(3, (1.0, 1.0))
    k = assemble(fem.stiffness_kernel(), mesh)
    nodes = np.arange(mesh.num_vertices)
    ac, bc = apply_dirichlet(k.tocsr(), np.zeros(mesh.num_vertices), DirichletBC(nodes, np.zeros_like(nodes, dtype=float)))
    x = solve_linear(ac, bc)
    assert np.abs(x).max() == 0.0


def test_dirichlet_1d_chain_midpoint():
    # three-node Laplace chain, ends pinned to 0 and 1
    a = sp.csr_matrix(np.array([[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]]))
    ac, bc = apply_dirichlet(a, np.zeros(3), DirichletBC(dofs=[0, 2], values=[0.0, 1.0]))
    x = solve_linear(ac, bc)
    assert x[1] == pytest.approx(0.5)


def test_dirichlet_idempotent():
    rng = np.random.default_rng(0)
    a = sp.csr_matrix(rng.standard_normal((5, 5)))
    rhs = rng.standard_normal(5)
    bc = DirichletBC(dofs=[1, 3], values=[2.0, -1.0])
    a1, b1 = apply_dirichlet(a, rhs, bc)
    a2, b2 = apply_dirichlet(a1, b1, bc)
    assert np.abs((a1 - a2).toarray()).max() == 0.0
    np.testing.assert_allclose(b1, b2, atol=1e-15)


def test_dirichlet_conflict_raises():
    with pytest.raises(InvalidArgumentError):
        DirichletBC(dofs=[2, 2], values=[0.0, 1.0])


def test_dirichlet_outside_space_raises():
    a = sp.identity(3, format="csr")
    with pytest.raises(InvalidArgumentError):
        apply_dirichlet(a, np.zeros(3), DirichletBC(dofs=[5], values=[0.0]))


# --- direct solve -----------------------------------------------------------


def test_solve_identity():
    rng = np.random.default_rng(1)
    r = rng.standard_normal(6)
    x = solve_linear(sp.identity(6, format="csr"), r)
    np.testing.assert_allclose(x, r, atol=1e-14)


def test_solve_2x2_hand_oracle():
    a = sp.csr_matrix(np.array([[4.0, 1.0], [1.0, 3.0]]))
    x = solve_linear(a, np.array([1.0, 2.0]))
    np.testing.assert_allclose(x, np.array([1.0, 7.0]) / 11.0, rtol=1e-13)


def test_solve_zero_row_singular():
    a = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(SingularSystemError):
        solve_linear(a, np.array([1.0, 1.0]))


def test_solve_recovers_random_spd_system():
    mesh = build_structured_mesh(5, (1.0, 1.0))
    a = assemble(fem.stiffness_kernel(), mesh) + assemble(fem.mass_kernel(), mesh)
    rng = np.random.default_rng(2)
    x = rng.standard_normal(mesh.num_vertices)
    out = solve_linear(a.tocsr(), a @ x)
    assert np.linalg.norm(out - x) <= 1e-9 * np.linalg.norm(x)


# --- boundary integration ---------------------------------------------------


def test_boundary_integrals_unit_square():
    mesh = build_structured_mesh(4, (1.0, 1.0))
    assert integrate_boundary(1.0, mesh, "left") == pytest.approx(1.0, abs=1e-13)
    assert integrate_boundary(lambda p: p[..., 1], mesh, "left") == pytest.approx(0.5, abs=1e-13)
    assert integrate_boundary(lambda p: p[..., 1] ** 2, mesh, "left") == pytest.approx(1.0 / 3.0, abs=1e-13)


def test_boundary_integral_nodal_data():
    mesh = build_structured_mesh(8, (1.0, 1.0))
    nodal = mesh.vertices[:, 1]
    assert integrate_boundary(nodal, mesh, "right") == pytest.approx(0.5, abs=1e-13)


def test_boundary_integral_unknown_tag():
    mesh = build_structured_mesh(2, (1.0, 1.0))
    with pytest.raises(InvalidArgumentError):
        integrate_boundary(1.0, mesh, "no-such-tag")
