"""Indicators, transport and redistancing of the level set."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hxopt import levelset as ls
from hxopt.errors import InvalidArgumentError, NoInterfaceError
from hxopt.mesh import build_structured_mesh


def test_indicator_nodal_values():
    chi_h, chi_c = ls.indicator_from_levelset(np.array([-0.3, 0.7, 0.0]))
    np.testing.assert_allclose(chi_h, [0.0, 1.0, 1.0])  # zeros count as hot
    np.testing.assert_allclose(chi_c, [1.0, 0.0, 0.0])


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=40))
@settings(max_examples=40, deadline=None)
def test_indicator_partition_of_unity(values):
    chi_h, chi_c = ls.indicator_from_levelset(np.array(values))
    np.testing.assert_allclose(chi_h + chi_c, 1.0)
    assert set(np.unique(chi_h)) <= {0.0, 1.0}


def test_interface_cells_definition():
    mesh = build_structured_mesh(4, (1.0, 1.0))
    phi = mesh.vertices[:, 0] - 0.49
    field = ls.LevelSetField(phi)
    cells = field.interface_cells(mesh)
    signs = field.signs()[mesh.cells]
    mixed = ~np.all(signs == signs[:, :1], axis=1)
    np.testing.assert_array_equal(cells, np.where(mixed)[0])


def test_theta_max_examples():
    assert ls.theta_max(np.zeros((7, 2))) == 0.0
    assert ls.theta_max(np.tile([3.0, -4.0], (5, 1))) == pytest.approx(7.0)
    theta = np.zeros((4, 2))
    theta[2] = [0.2, 0.1]
    assert ls.theta_max(theta) == pytest.approx(0.3)


# --- potentials --------------------------------------------------------------


def test_reinit_potential_branch_values():
    assert ls.reinit_potential(1.0) == (pytest.approx(0.0, abs=1e-15), pytest.approx(0.0, abs=1e-15))
    eta0, iota0 = ls.reinit_potential(0.0)
    assert eta0 == pytest.approx(1.0 / 6.0)
    assert iota0 == pytest.approx(-1.0)
    eta2, iota2 = ls.reinit_potential(2.0)
    assert eta2 == pytest.approx(0.5)
    assert iota2 == pytest.approx(0.5)


@given(st.floats(1e-6, 0.5))
@settings(max_examples=30, deadline=None)
def test_reinit_potential_branch_continuity(eps):
    e_lo, i_lo = ls.reinit_potential(1.0 - eps)
    e_hi, i_hi = ls.reinit_potential(1.0 + eps)
    assert abs(e_lo - e_hi) <= eps + eps**2
    assert abs(i_lo - i_hi) <= 2 * eps


@given(st.floats(0.05, 4.0))
@settings(max_examples=40, deadline=None)
def test_iota_is_eta_slope_over_alpha(alpha):
    h = 1e-6
    e_plus, _ = ls.reinit_potential(alpha + h)
    e_minus, _ = ls.reinit_potential(alpha - h)
    _, iota = ls.reinit_potential(alpha)
    assert (e_plus - e_minus) / (2 * h) / alpha == pytest.approx(iota, abs=1e-5)


def test_reinit_potential_negative_alpha_rejected():
    with pytest.raises(InvalidArgumentError):
        ls.reinit_potential(-0.1)


# --- projection --------------------------------------------------------------


def test_projection_of_signed_distance_is_identity():
    mesh = build_structured_mesh(16, (1.0, 1.0))
    phi = mesh.vertices[:, 0] - 0.5
    proj = ls.interface_projection(phi, mesh)
    np.testing.assert_allclose(proj.values, phi[proj.nodes], atol=1e-8)
    assert proj.floored_cells.size == 0


def test_projection_halves_doubled_gradient():
    mesh = build_structured_mesh(16, (1.0, 1.0))
    phi = 2.0 * (mesh.vertices[:, 0] - 0.5)
    proj = ls.interface_projection(phi, mesh)
    np.testing.assert_allclose(proj.values, phi[proj.nodes] / 2.0, atol=1e-6)


def test_projection_flat_cell_flagged():
    mesh = build_structured_mesh(2, (1.0, 1.0))
    phi = np.zeros(mesh.num_vertices)
    phi[mesh.vertices[:, 0] > 0.9] = 1e-13
    phi[mesh.vertices[:, 0] < 0.1] = -1e-13
    proj = ls.interface_projection(phi, mesh)
    assert np.all(np.isfinite(proj.values))
    assert proj.floored_cells.size > 0


def test_projection_without_interface_raises():
    mesh = build_structured_mesh(4, (1.0, 1.0))
    with pytest.raises(NoInterfaceError):
        ls.interface_projection(np.ones(mesh.num_vertices), mesh)


# --- transport ---------------------------------------------------------------


def test_advect_zero_velocity_is_identity():
    mesh = build_structured_mesh(16, (1.0, 1.0))
    phi = mesh.vertices[:, 0] - 0.4
    out = ls.advect_levelset(phi, np.zeros((mesh.num_vertices, 2)), ls.AdvectionSettings(pe_hj=800.0), mesh=mesh)
    np.testing.assert_array_equal(out, phi)


def test_advect_constant_field_unchanged():
    mesh = build_structured_mesh(16, (1.0, 1.0))
    theta = np.ones((mesh.num_vertices, 2))
    out = ls.advect_levelset(np.full(mesh.num_vertices, 2.5), theta, ls.AdvectionSettings(pe_hj=800.0), mesh=mesh)
    np.testing.assert_allclose(out, 2.5, atol=1e-10)


def _crossing(mesh, phi, y=0.5):
    row = np.where(np.abs(mesh.vertices[:, 1] - y) < 1e-12)[0]
    row = row[np.argsort(mesh.vertices[row, 0])]
    x, v = mesh.vertices[row, 0], phi[row]
    i = np.where(np.sign(v[:-1]) != np.sign(v[1:]))[0][0]
    return x[i] - v[i] * (x[i + 1] - x[i]) / (v[i + 1] - v[i])


@pytest.mark.parametrize("sign,expected", [(1.0, 0.4), (-1.0, 0.6)])
def test_advect_translates_interface(sign, expected):
    """Distance to the line x = 0.5 under a uniform unit velocity moves by
    theta_max * t_final, direction set by the convention switch."""
    mesh = build_structured_mesh(128, (1.0, 1.0))
    phi = mesh.vertices[:, 0] - 0.5
    theta = np.zeros((mesh.num_vertices, 2))
    theta[:, 0] = 1.0
    settings_ = ls.AdvectionSettings(pe_hj=50.0 * 128, t_final=0.1, sign=sign)
    out = ls.advect_levelset(phi, theta, settings_, mesh=mesh)
    assert _crossing(mesh, out) == pytest.approx(expected, abs=0.005)


def test_advect_composition_consistency():
    """Two half-time transports land within 2 percent of one full transport."""
    mesh = build_structured_mesh(64, (1.0, 1.0))
    phi = mesh.vertices[:, 0] - 0.5
    theta = np.zeros((mesh.num_vertices, 2))
    theta[:, 0] = 1.0
    settings_ = ls.AdvectionSettings(pe_hj=50.0 * 64, sign=-1.0)
    full = ls.advect_levelset(phi, theta, settings_, mesh=mesh, t_final=0.1)
    half = ls.advect_levelset(phi, theta, settings_, mesh=mesh, t_final=0.05)
    half2 = ls.advect_levelset(half, theta, settings_, mesh=mesh, t_final=0.05)
    assert abs(_crossing(mesh, half2) - _crossing(mesh, full)) <= 0.02 * 0.1


def test_advect_min_step_underflow():
    mesh = build_structured_mesh(8, (1.0, 1.0))
    phi = mesh.vertices[:, 0] - 0.5
    theta = np.zeros((mesh.num_vertices, 2))
    theta[:, 0] = np.nan  # poisons every solve so the step ladder underflows
    settings_ = ls.AdvectionSettings(pe_hj=100.0)
    with pytest.raises((ls.AdvectionFailure, InvalidArgumentError)):
        ls.advect_levelset(phi, theta, settings_, mesh=mesh, t_final=0.1)


# --- redistancing ------------------------------------------------------------


def test_reinitialize_fixed_point():
    mesh = build_structured_mesh(16, (1.0, 1.0))
    phi = mesh.vertices[:, 0] - 0.5
    out, its = ls.reinitialize(phi, mesh)
    np.testing.assert_allclose(out.phi, phi, atol=1e-8)


def test_reinitialize_scaled_circle():
    mesh = build_structured_mesh(64, (1.0, 1.0))
    phi = 2.0 * (np.linalg.norm(mesh.vertices - 0.5, axis=1) - 0.25)
    out, its = ls.reinitialize(phi, mesh)
    assert its <= 10
    g = ls.cell_gradient_norm(mesh, out.phi)
    cent = mesh.vertices[mesh.cells].mean(axis=1)
    interior = np.all((cent > 2 / 64) & (cent < 1 - 2 / 64), axis=1)
    frac = np.mean((g[interior] >= 0.93) & (g[interior] <= 1.07))
    assert frac >= 0.95


def test_reinitialize_preserves_interface():
    mesh = build_structured_mesh(48, (1.0, 1.0))
    phi = 3.0 * (np.linalg.norm(mesh.vertices - [0.45, 0.55], axis=1) - 0.22)
    before = ls.LevelSetField(phi)
    cells0 = before.interface_cells(mesh)
    out, _ = ls.reinitialize(phi, mesh)
    np.testing.assert_array_equal(out.interface_cells(mesh), cells0)
    nodes = np.unique(mesh.cells[cells0])
    assert np.all((out.phi[nodes] >= 0) == (phi[nodes] >= 0))


def test_reinitialize_improves_eikonal_potential():
    mesh = build_structured_mesh(48, (1.0, 1.0))
    phi = 0.3 * (np.linalg.norm(mesh.vertices - 0.5, axis=1) - 0.25)
    e_before = ls.reinit_potential(ls.cell_gradient_norm(mesh, phi))[0].mean()
    out, _ = ls.reinitialize(phi, mesh)
    e_after = ls.reinit_potential(ls.cell_gradient_norm(mesh, out.phi))[0].mean()
    assert e_after <= e_before


def test_chi_bounds_after_interpolation():
    mesh = build_structured_mesh(12, (1.0, 1.0))
    phi = np.sin(5 * mesh.vertices[:, 0]) - 0.2
    chi_h, chi_c = ls.indicator_from_levelset(phi)
    from hxopt.fem import triangle_rule

    lam, _ = triangle_rule(4)
    vals_h = np.einsum("qa,na->nq", lam, chi_h[mesh.cells])
    vals_c = np.einsum("qa,na->nq", lam, chi_c[mesh.cells])
    assert vals_h.min() >= -1e-12 and vals_h.max() <= 1 + 1e-12
    assert vals_c.min() >= -1e-12 and vals_c.max() <= 1 + 1e-12
