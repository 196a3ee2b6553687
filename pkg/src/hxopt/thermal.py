"""Advection-diffusion temperature solve over the whole domain.

One temperature field is driven by the sum of the two fluid velocities;
streamline stabilization mirrors the flow solver (the second-order part of
the strong residual vanishes element-wise on P1 and is dropped).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateStabilizationError, InvalidArgumentError
from .fem import DirichletBC, apply_dirichlet, scatter_matrix, solve_linear


@dataclass
class ThermalParams:
    """Dimensionless transport parameters and inlet data."""

    pe: float = 5.0e3
    beta_gls: float = 0.9
    cold_inlet_tag: str = "left"
    hot_inlet_tag: str = "right"
    cold_value: float = 0.0
    hot_value: float = 1.0

    def __post_init__(self):
        if self.pe <= 0:
            raise InvalidArgumentError("Peclet number must be positive")


@dataclass
class ThermalState:
    temperature: np.ndarray  # (nv,)
    max_cross_leakage: float = 0.0  # max counterpart speed over strictly-single-phase nodes

    def __post_init__(self):
        self.temperature = np.asarray(self.temperature, dtype=float)
        if not np.all(np.isfinite(self.temperature)):
            raise InvalidArgumentError("temperature field contains non-finite values")


def gls_parameter_T(u_local, h, pe, beta_gls):
    """Stabilization parameter of the transport equation:
    beta * (4 u.u / h^2 + (36 / (h^2 Pe))^2)^(-1/2)."""
    u_local = np.asarray(u_local, dtype=float)
    uu = np.sum(u_local * u_local, axis=-1)
    term = 4.0 * uu / np.asarray(h) ** 2 + (36.0 / (np.asarray(h) ** 2 * pe)) ** 2
    if np.any(term <= 0.0):
        raise DegenerateStabilizationError("advective and diffusive terms both vanish")
    return beta_gls / np.sqrt(term)


def _delta_T(ubar, h, pe, beta):
    uu = np.sum(ubar * ubar, axis=-1)
    term = 4.0 * uu / h**2 + (36.0 / (h**2 * pe)) ** 2
    return beta * term**-0.5


_T2 = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0  # int lam_a lam_b / area


def thermal_element_residual(geom, t_loc, u_loc, params):
    """Element residual rows of the stabilized transport form.

    The integrands are quadratic in the barycentric coordinates and are
    integrated exactly.  Broadcasts over leading batch axes like the flow
    evaluator; returns shape (..., nc, 3).
    """
    pe = params.pe
    area, grad, h = geom.area, geom.grad, geom.h
    gradT = np.einsum("...na,...nad->...nd", t_loc, grad)
    ubar = np.mean(u_loc, axis=-2)
    delta = _delta_T(ubar, h, pe, params.beta_gls)

    adv_c = np.einsum("...nck,...nk->...nc", u_loc, gradT)  # (u . grad T)(x) = sum_c lam_c adv_c
    test_c = np.einsum("...ned,...nad->...nea", u_loc, grad)  # u . grad(lambda_a) coefficients
    r = np.einsum("ac,...nc->...na", _T2, adv_c)
    r = r + delta[..., None] * np.einsum("ce,...nc,...nea->...na", _T2, adv_c, test_c)
    r = r + (1.0 / pe) * np.einsum("...nd,...nad->...na", gradT, grad)
    return r * area[..., None]


def assemble_transport_matrix(mesh, u, params):
    """Global matrix of the stabilized transport form for a given velocity.

    The form is linear in the temperature, so the matrix equals the residual
    Jacobian; it is built column-by-column from the element residual by
    linearity (unit local temperatures).
    """
    geom = mesh.geometry
    u_loc = u[mesh.cells]
    nc = mesh.num_cells
    t_b = np.zeros((3, nc, 3))
    for j in range(3):
        t_b[j, :, j] = 1.0
    cols = thermal_element_residual(geom, t_b, u_loc, params)  # (3, nc, 3)
    local = np.ascontiguousarray(np.moveaxis(cols, 0, -1))  # (nc, row a, col b)
    return scatter_matrix(mesh.cells, local, mesh.num_vertices)


def combined_velocity(mesh, chi_C, u_C, u_H, v_max=1.0):
    """Sum of the per-fluid velocities, with the cross-phase leakage measured
    over strictly-single-phase nodes (nodes all of whose cells lie in one
    phase) before the two fields are merged."""
    cells = mesh.cells
    cold_cell = np.all(chi_C[cells] >= 0.5, axis=1)
    hot_cell = np.all(chi_C[cells] < 0.5, axis=1)
    nv = mesh.num_vertices
    touches_cold = np.zeros(nv, bool)
    touches_hot = np.zeros(nv, bool)
    touches_cold[cells[cold_cell].ravel()] = True
    touches_hot[cells[hot_cell].ravel()] = True
    strictly_cold = touches_cold & ~touches_hot
    strictly_hot = touches_hot & ~touches_cold
    leak = 0.0
    if strictly_cold.any():
        leak = max(leak, float(np.linalg.norm(u_H[strictly_cold], axis=1).max()))
    if strictly_hot.any():
        leak = max(leak, float(np.linalg.norm(u_C[strictly_hot], axis=1).max()))
    return u_C + u_H, leak / max(v_max, 1e-30)


def thermal_bc(mesh, params: ThermalParams) -> DirichletBC:
    cold = mesh.nodes_with(params.cold_inlet_tag)
    hot = mesh.nodes_with(params.hot_inlet_tag)
    dofs = np.concatenate([cold, hot])
    values = np.concatenate([np.full(cold.size, params.cold_value), np.full(hot.size, params.hot_value)])
    return DirichletBC(dofs=dofs, values=values)


def solve_temperature(mesh, u_combined, params: ThermalParams, bc: DirichletBC | None = None, leakage=0.0) -> ThermalState:
    """Linear solve of the stabilized transport equation.

    Inlet temperatures are strong conditions; every other boundary is left
    natural (adiabatic).
    """
    if not np.all(np.isfinite(u_combined)):
        raise InvalidArgumentError("non-finite velocity passed to temperature solve")
    a = assemble_transport_matrix(mesh, u_combined, params)
    rhs = np.zeros(mesh.num_vertices)
    if bc is None:
        bc = thermal_bc(mesh, params)
    a_c, rhs_c = apply_dirichlet(a, rhs, bc)
    t = solve_linear(a_c, rhs_c)
    return ThermalState(temperature=t, max_cross_leakage=float(leakage))
