"""Adjoint solves, shape gradients and the Hilbertian smoothing step.

The chain is fully discrete: the adjoint systems transpose the exact
Jacobians of the discrete residuals (including the velocity dependence of
the stabilization parameters), and the shape gradient is the derivative of
the discrete Lagrangian with respect to the nodal mesh coordinates, taken
by element-level complex step with nodal state and phase values riding
along unchanged.  Gradients therefore match re-solved functional values to
second order, which the Taylor tests pin down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError, SolverFailure
from .fem import (
    LUOperator,
    cell_geometry,
    facet_geometry,
    facet_rule,
    scatter_matrix,
    triangle_rule,
    vector_dofmap,
    vector_mass_local,
    vector_stiffness_local,
)
from .flow import (
    CS_STEP,
    assemble_ns_system,
    constrained_jacobian,
    flow_dofmap,
    flow_element_residual,
    localize_flow,
)
from .system import (
    CoupledSystem,
    HeatFluxFunctional,
    PressureDropFunctional,
    PrimalStates,
    functional_state_gradient,
    functional_value,
)
from .thermal import assemble_transport_matrix, thermal_element_residual


@dataclass
class AdjointState:
    """Adjoint velocity/pressure per fluid and adjoint temperature."""

    lam_cold: np.ndarray  # (3 nv,)
    lam_hot: np.ndarray  # (3 nv,)
    lam_thermal: np.ndarray  # (nv,)
    residual_norms: tuple = (0.0, 0.0, 0.0)


@dataclass
class ShapeDerivative:
    """Assembled volumetric shape gradient: one 2-vector per mesh node."""

    coefficients: np.ndarray  # (nv, 2)

    def __call__(self, xi):
        return float(np.sum(self.coefficients * np.asarray(xi)))

    def __neg__(self):
        return ShapeDerivative(-self.coefficients)


@dataclass
class ExtensionSettings:
    gamma: float = 0.4
    c1: float = 1.0e4

    def __post_init__(self):
        if self.gamma <= 0:
            raise InvalidArgumentError("regularization weight must be positive")
        if self.c1 <= 0:
            raise InvalidArgumentError("boundary penalty weight must be positive")


# ---------------------------------------------------------------------------
# adjoints
# ---------------------------------------------------------------------------


def thermal_velocity_jacobian(mesh, temperature, u_combined, params):
    """Exact derivative of the transport residual rows with respect to the
    packed velocity dofs (same matrix for either fluid: the equation sees
    only the sum)."""
    geom = mesh.geometry
    t_loc = temperature[mesh.cells]
    u_loc = u_combined[mesh.cells]
    u_b = np.broadcast_to(u_loc, (6,) + u_loc.shape).astype(complex).copy()
    for j in range(6):
        u_b[j, :, j // 2, j % 2] += 1j * CS_STEP
    r_b = thermal_element_residual(geom, t_loc, u_b, params)  # (6, nc, 3)
    local = np.ascontiguousarray(np.moveaxis(r_b.imag / CS_STEP, 0, -1))  # (nc, 3, 6)
    rows = np.repeat(mesh.cells, 6, axis=1).ravel()
    cols = np.tile(vector_dofmap(mesh.cells), (1, 3)).ravel()
    return sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(mesh.num_vertices, 2 * mesh.num_vertices)
    ).tocsr()


class AdjointWorkspace:
    """Factorizations shared by the adjoint solves of all functionals at one
    design/state pair."""

    def __init__(self, system: CoupledSystem, states: PrimalStates):
        self.system = system
        self.states = states
        mesh = system.mesh
        nv = mesh.num_vertices

        _, a_cold = assemble_ns_system(mesh, system.chi_cold_pen, system.params_cold, states.cold.dofs(), exact=True)
        _, a_hot = assemble_ns_system(mesh, system.chi_hot_pen, system.params_hot, states.hot.dofs(), exact=True)
        self.jac_cold = constrained_jacobian(a_cold, system.bc_cold, 3 * nv)
        self.jac_hot = constrained_jacobian(a_hot, system.bc_hot, 3 * nv)

        u_comb = states.combined_velocity()
        a_t = assemble_transport_matrix(mesh, u_comb, system.params_thermal)
        mask_t = np.zeros(nv, dtype=bool)
        mask_t[system.bc_thermal.dofs] = True
        keep = sp.diags((~mask_t).astype(float))
        self.jac_thermal = (keep @ a_t + sp.diags(mask_t.astype(float))).tocsr()

        b_raw = thermal_velocity_jacobian(mesh, states.thermal.temperature, u_comb, system.params_thermal)
        self.b_thermal_u = (keep @ b_raw).tocsr()  # constrained transport rows see no velocity

        self.lu_cold_t = LUOperator(self.jac_cold.T)
        self.lu_hot_t = LUOperator(self.jac_hot.T)
        self.lu_thermal_t = LUOperator(self.jac_thermal.T)

    def solve(self, name: str) -> AdjointState:
        system, states = self.system, self.states
        nv = system.mesh.num_vertices
        d_cold, d_hot, d_t = functional_state_gradient(system, states, name)

        lam_t = self.lu_thermal_t.solve(-d_t)
        coupling = self.b_thermal_u.T @ lam_t  # (2 nv,)
        rhs_cold = -d_cold
        rhs_cold[: 2 * nv] -= coupling
        rhs_hot = -d_hot
        rhs_hot[: 2 * nv] -= coupling
        lam_c = self.lu_cold_t.solve(rhs_cold)
        lam_h = self.lu_hot_t.solve(rhs_hot)

        res = (
            float(np.linalg.norm(self.jac_cold.T @ lam_c - rhs_cold)),
            float(np.linalg.norm(self.jac_hot.T @ lam_h - rhs_hot)),
            float(np.linalg.norm(self.jac_thermal.T @ lam_t + d_t)),
        )
        if max(res) > 1e-9 * max(1.0, np.linalg.norm(rhs_cold), np.linalg.norm(rhs_hot)):
            raise SolverFailure(f"adjoint residuals too large: {res}")
        return AdjointState(lam_cold=lam_c, lam_hot=lam_h, lam_thermal=lam_t, residual_norms=res)


def solve_adjoints(system: CoupledSystem, states: PrimalStates, name: str) -> AdjointState:
    """Adjoint of the fully coupled discrete system for one functional.

    The transport adjoint is solved first; its advection coupling then
    sources both flow adjoints.  Pressure-drop functionals have a zero
    transport adjoint and only their own fluid responds.
    """
    if name not in system.functionals:
        raise InvalidArgumentError(f"unknown functional {name!r}")
    return AdjointWorkspace(system, states).solve(name)


# ---------------------------------------------------------------------------
# coordinate gradient of the Lagrangian
# ---------------------------------------------------------------------------


def _masked(lam, dofs):
    out = lam.copy()
    out[dofs] = 0.0
    return out


def _flow_form_coordinate_gradient(mesh, chi, params, state_dofs, lam_list):
    """For each adjoint vector, the gradient of lam . R_raw(X, s) with
    respect to nodal coordinates, states frozen.  Returns list of (nv, 2)."""
    cells = mesh.cells
    coords = mesh.vertices[cells]
    u_loc, p_loc = localize_flow(mesh, state_dofs)
    chi_loc = chi[cells]
    dofmap = flow_dofmap(mesh)
    lam_locs = [lam[dofmap] for lam in lam_list]

    coords_b = np.broadcast_to(coords, (6,) + coords.shape).astype(complex).copy()
    for j in range(6):
        coords_b[j, :, j // 2, j % 2] += 1j * CS_STEP
    geom_b = cell_geometry(coords_b)
    r_u, r_p = flow_element_residual(geom_b, u_loc, p_loc, chi_loc, params, None)
    local = np.concatenate([r_u.reshape(6, -1, 6), r_p], axis=-1).imag / CS_STEP  # (6, nc, 9)

    grads = []
    for lam_loc in lam_locs:
        contrib = np.einsum("jnl,nl->jn", local, lam_loc)  # (6, nc)
        g = np.zeros((mesh.num_vertices, 2))
        for j in range(6):
            np.add.at(g[:, j % 2], cells[:, j // 2], contrib[j])
        grads.append(g)
    return grads


def _thermal_form_coordinate_gradient(mesh, temperature, u_combined, params, lam_list):
    cells = mesh.cells
    coords = mesh.vertices[cells]
    t_loc = temperature[cells]
    u_loc = u_combined[cells]

    coords_b = np.broadcast_to(coords, (6,) + coords.shape).astype(complex).copy()
    for j in range(6):
        coords_b[j, :, j // 2, j % 2] += 1j * CS_STEP
    geom_b = cell_geometry(coords_b)
    r_b = thermal_element_residual(geom_b, t_loc, u_loc, params).imag / CS_STEP  # (6, nc, 3)

    grads = []
    for lam in lam_list:
        lam_loc = lam[cells]
        contrib = np.einsum("jnl,nl->jn", r_b, lam_loc)
        g = np.zeros((mesh.num_vertices, 2))
        for j in range(6):
            np.add.at(g[:, j % 2], cells[:, j // 2], contrib[j])
        grads.append(g)
    return grads


def _bc_coordinate_gradient(mesh, bc, value_fn, lam):
    """Gradient of lam . (s_c - g_c(X)): the strong values are regenerated
    nodal-pointwise from the coordinates, so an all-nodes complex step per
    coordinate direction recovers each dof's own derivative."""
    g = np.zeros((mesh.num_vertices, 2))
    if value_fn is None:
        return g
    nodes = bc.dofs // 2
    lam_c = lam[bc.dofs]
    for c in range(2):
        verts = mesh.vertices.astype(complex).copy()
        verts[:, c] += 1j * CS_STEP
        dg = np.asarray(value_fn(verts)).imag / CS_STEP
        np.add.at(g[:, c], nodes, -lam_c * dg)
    return g


def _functional_coordinate_gradient(system, states, name):
    """Explicit coordinate dependence of the functional itself (facet
    measures and normals; nodal data frozen)."""
    mesh = system.mesh
    g = np.zeros((mesh.num_vertices, 2))
    spec = system.functionals[name]
    tags = (
        [spec.outlet_tag]
        if isinstance(spec, HeatFluxFunctional)
        else [spec.inlet_tag, spec.outlet_tag]
    )
    nodes = np.unique(np.concatenate([mesh.facets[mesh.facets_with(t)].ravel() for t in tags]))
    for node in nodes:
        for c in range(2):
            verts = mesh.vertices.astype(complex).copy()
            verts[node, c] += 1j * CS_STEP
            val = functional_value(system, states, name, vertices=verts)
            g[node, c] += val.imag / CS_STEP
    return g


def shape_gradients(system: CoupledSystem, states: PrimalStates, adjoints: dict) -> dict:
    """Shape gradients for several functionals at once, sharing the element
    coordinate sweeps.  `adjoints` maps functional name -> AdjointState."""
    mesh = system.mesh
    names = list(adjoints)
    lam_cold = [_masked(adjoints[n].lam_cold, system.bc_cold.dofs) for n in names]
    lam_hot = [_masked(adjoints[n].lam_hot, system.bc_hot.dofs) for n in names]
    lam_th = [_masked(adjoints[n].lam_thermal, system.bc_thermal.dofs) for n in names]

    g_cold = _flow_form_coordinate_gradient(
        mesh, system.chi_cold_pen, system.params_cold, states.cold.dofs(), lam_cold
    )
    g_hot = _flow_form_coordinate_gradient(
        mesh, system.chi_hot_pen, system.params_hot, states.hot.dofs(), lam_hot
    )
    u_comb = states.combined_velocity()
    g_th = _thermal_form_coordinate_gradient(
        mesh, states.thermal.temperature, u_comb, system.params_thermal, lam_th
    )

    out = {}
    for i, n in enumerate(names):
        g = g_cold[i] + g_hot[i] + g_th[i]
        g += _bc_coordinate_gradient(mesh, system.bc_cold, system.bc_cold_value_fn, adjoints[n].lam_cold)
        g += _bc_coordinate_gradient(mesh, system.bc_hot, system.bc_hot_value_fn, adjoints[n].lam_hot)
        g += _functional_coordinate_gradient(system, states, n)
        out[n] = ShapeDerivative(coefficients=g)
    return out


def assemble_shape_derivative(system, states, adjoint: AdjointState, name: str) -> ShapeDerivative:
    """Volumetric shape gradient of one functional (nodal phases and state
    values ride with the nodes)."""
    return shape_gradients(system, states, {name: adjoint})[name]


# ---------------------------------------------------------------------------
# Hilbertian extension
# ---------------------------------------------------------------------------


def extension_matrix(mesh, settings: ExtensionSettings, fixed_nodes=None):
    """gamma grad:grad + mass + c1 * boundary normal-trace penalty on the P1
    vector space; optional homogeneous constraints on given nodes."""
    geom = mesh.geometry
    lam, w = triangle_rule(2)
    local = settings.gamma * vector_stiffness_local(geom) + vector_mass_local(geom, lam, w)
    mat = scatter_matrix(vector_dofmap(mesh.cells), local, 2 * mesh.num_vertices)

    pairs = mesh.facets
    length, normal = facet_geometry(
        mesh.vertices[pairs[:, 0]], mesh.vertices[pairs[:, 1]], mesh.vertices[mesh.facet_opposite]
    )
    m_ref = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    # local facet dofs ordered [p0x p0y p1x p1y]: entry[(2i+k),(2j+l)] = L m_ij n_k n_l
    block = np.einsum("f,ij,fk,fl->fikjl", settings.c1 * length, m_ref, normal, normal).reshape(-1, 4, 4)
    fdof = np.stack([2 * pairs[:, 0], 2 * pairs[:, 0] + 1, 2 * pairs[:, 1], 2 * pairs[:, 1] + 1], axis=1)
    mat = mat + scatter_matrix(fdof, block, 2 * mesh.num_vertices)

    if fixed_nodes is not None and len(fixed_nodes):
        mask = np.zeros(2 * mesh.num_vertices, dtype=bool)
        fixed_nodes = np.asarray(fixed_nodes, dtype=int)
        mask[2 * fixed_nodes] = True
        mask[2 * fixed_nodes + 1] = True
        keep = sp.diags((~mask).astype(float))
        mat = keep @ mat @ keep + sp.diags(mask.astype(float))
    return mat.tocsr()


class HilbertianExtender:
    """Reusable factorization of the extension operator for one mesh."""

    def __init__(self, mesh, settings: ExtensionSettings, fixed_nodes=None):
        self.mesh = mesh
        self.settings = settings
        self.fixed_nodes = None if fixed_nodes is None else np.asarray(fixed_nodes, dtype=int)
        self.matrix = extension_matrix(mesh, settings, fixed_nodes)
        self._lu = LUOperator(self.matrix)
        # unconstrained operator defines the inner product
        self.inner_matrix = self.matrix if fixed_nodes is None else extension_matrix(mesh, settings)

    def extend(self, dj: ShapeDerivative):
        rhs = np.asarray(dj.coefficients, dtype=float).reshape(-1).copy()
        if self.fixed_nodes is not None:
            rhs[2 * self.fixed_nodes] = 0.0
            rhs[2 * self.fixed_nodes + 1] = 0.0
        zeta = self._lu.solve(rhs)
        return zeta.reshape(-1, 2)

    def inner(self, za, zb):
        return float(np.asarray(za).reshape(-1) @ (self.inner_matrix @ np.asarray(zb).reshape(-1)))


def hilbertian_extension(dj: ShapeDerivative, settings: ExtensionSettings, mesh, fixed_nodes=None):
    """Smooth velocity field representing a shape gradient in the
    regularized inner product (boundary normal component penalized)."""
    return HilbertianExtender(mesh, settings, fixed_nodes).extend(dj)
