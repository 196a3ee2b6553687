"""Penalized incompressible Navier-Stokes solver for one fluid.

The complementary phase is modeled by a permeability penalization added to
the momentum equation, and equal-order P1/P1 velocity-pressure elements are
stabilized by a least-squares term built on the strong residual (whose
second-order part vanishes element-wise on linear elements and is dropped).

The element residual evaluator accepts complex coordinate or state arrays;
the Newton Jacobian and the exact state Jacobian used by the adjoint layer
are both obtained from it by complex-step differentiation at element level,
so they are exact to round-off for their residual.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (
    AssemblyFailure,
    DegenerateStabilizationError,
    InvalidArgumentError,
    SolverFailure,
)
from .fem import LUOperator, scatter_matrix, vector_dofmap

CS_STEP = 1e-60  # complex-step size; imaginary part / step = exact derivative


@dataclass
class FlowParams:
    """Dimensionless flow parameters and solver controls."""

    re: float = 10.0
    da: float = 1e-5
    beta_gls: float = 0.9
    inlet_tag: str = "left"
    outlet_tag: str = "right"
    v_max: float = 1.0
    newton_rtol: float = 1e-8
    newton_atol: float = 1e-9
    newton_maxiter: int = 30

    def __post_init__(self):
        if self.re <= 0:
            raise InvalidArgumentError("Reynolds number must be positive")
        if not 0 < self.da < 1:
            raise InvalidArgumentError("Darcy number must lie in (0, 1)")
        if not 0 < self.beta_gls <= 2:
            raise InvalidArgumentError("stabilization constant must lie in (0, 2]")


@dataclass
class FlowState:
    """Converged velocity/pressure pair plus the Newton residual history."""

    velocity: np.ndarray  # (nv, 2)
    pressure: np.ndarray  # (nv,)
    residuals: list = field(default_factory=list)

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.pressure = np.asarray(self.pressure, dtype=float)
        if self.velocity.shape != (self.pressure.shape[0], 2):
            raise InvalidArgumentError("velocity/pressure node counts disagree")
        if not (np.all(np.isfinite(self.velocity)) and np.all(np.isfinite(self.pressure))):
            raise InvalidArgumentError("flow state contains non-finite values")

    def dofs(self):
        nv = self.pressure.shape[0]
        return np.concatenate([self.velocity.reshape(2 * nv), self.pressure])


def gls_parameter_ns(u_local, h, re, da, chi_local, beta_gls):
    """Stabilization parameter of the penalized momentum equation:
    beta * (4 u.u / h^2 + (36 nu / h^2)^2 + (chi / Da)^2)^(-1/2), nu = 1/re.

    Vectorized; raises if every term vanishes.
    """
    u_local = np.asarray(u_local, dtype=float)
    uu = np.sum(u_local * u_local, axis=-1)
    nu = 1.0 / re if np.isfinite(re) else 0.0
    term = 4.0 * uu / np.asarray(h) ** 2 + (36.0 * nu / np.asarray(h) ** 2) ** 2
    term = term + (np.asarray(chi_local) / da) ** 2
    if np.any(term <= 0.0):
        raise DegenerateStabilizationError("advective, diffusive and penalization terms all vanish")
    return beta_gls / np.sqrt(term)


# ---------------------------------------------------------------------------
# element residual
# ---------------------------------------------------------------------------


def _delta_ns(ubar, h, chibar, re, da, beta):
    """Cell-wise stabilization parameter, complex-safe (z**-0.5 analytic)."""
    uu = np.sum(ubar * ubar, axis=-1)
    nu = 1.0 / re
    term = 4.0 * uu / h**2 + (36.0 * nu / h**2) ** 2 + (chibar / da) ** 2
    return beta * term**-0.5


def _bary_moment(counts):
    """Exact integral of a barycentric monomial over the reference measure:
    int lam1^p lam2^q lam3^r dA = area * 2 p! q! r! / (p+q+r+2)!."""
    from math import factorial

    num = 2
    for c in counts:
        num *= factorial(c)
    return num / factorial(sum(counts) + 2)


def _moment_tensor(order):
    t = np.zeros((3,) * order)
    for idx in np.ndindex(*t.shape):
        counts = [idx.count(0), idx.count(1), idx.count(2)]
        t[idx] = _bary_moment(counts)
    return t

_T2 = _moment_tensor(2)  # int lam_a lam_b / area
_T3 = _moment_tensor(3)
_T4 = _moment_tensor(4)


def flow_element_residual(geom, u_loc, p_loc, chi_loc, params, delta_override=None):
    """Element residuals of the stabilized momentum/continuity forms.

    Every integrand is polynomial in the barycentric coordinates, so the
    integrals are taken exactly through precomputed moment tensors.  Shapes
    broadcast over leading batch axes: geometry fields (..., nc, ...),
    u_loc (..., nc, 3, 2), p_loc (..., nc, 3), chi_loc (nc, 3).  Returns
    (r_u, r_p) of shapes (..., nc, 3, 2) and (..., nc, 3).
    """
    da = params.da
    nu = 1.0 / params.re
    area, grad, h = geom.area, geom.grad, geom.h

    gradu = np.einsum("...nak,...nad->...nkd", u_loc, grad)  # (..., nc, 2, 2)
    gradp = np.einsum("...na,...nad->...nd", p_loc, grad)  # (..., nc, 2)
    divu = gradu[..., 0, 0] + gradu[..., 1, 1]
    pbar = np.mean(p_loc, axis=-1)

    if delta_override is None:
        ubar = np.mean(u_loc, axis=-2)
        chibar = np.mean(chi_loc, axis=-1)
        delta = _delta_ns(ubar, h, chibar, params.re, da, params.beta_gls)
    else:
        delta = delta_override

    # coefficient fields on lam: strong_k(x) = sum_c lam_c S1[c,k] + S0[k]
    #   + sum_cd lam_c lam_d X[c] u[d,k]; test row TD_a(x) = sum_e lam_e
    #   A1[e,a] + sum_e lam_e lam_a X[e].  The phase indicator is constant
    #   across batch slots, so its moment contractions are taken once.
    s1 = np.einsum("...ncd,...nkd->...nck", u_loc, gradu)  # convection
    s0 = gradp
    a1 = np.einsum("...ned,...nad->...nea", u_loc, grad)  # u . grad(lambda_a)
    x_pen = chi_loc / da  # X[e]
    t3x_gal = np.einsum("acd,nc->nad", _T3, x_pen)
    t3x_test = np.einsum("cde,nc->nde", _T3, x_pen)
    t3x_s1 = np.einsum("cea,ne->nca", _T3, x_pen)
    t2x_a = np.einsum("ea,ne->na", _T2, x_pen)
    t4xx = np.einsum("cdea,nc,ne->nda", _T4, x_pen, x_pen)
    t2x = np.einsum("cd,nc->nd", _T2, x_pen)

    # Galerkin parts
    r_u = np.einsum("ac,...nck->...nak", _T2, s1)
    r_u = r_u + np.einsum("nad,...ndk->...nak", t3x_gal, u_loc)
    r_u = r_u + nu * np.einsum("...nkd,...nad->...nak", gradu, grad)
    r_u = r_u - pbar[..., None, None] * grad

    # least-squares coupling, integrated exactly via the moment tensors
    gls = np.einsum("ce,...nck,...nea->...nak", _T2, s1, a1)
    gls = gls + np.einsum("...nk,...na->...nak", s0, np.sum(a1, axis=-2)) / 3.0
    gls = gls + np.einsum("nde,...ndk,...nea->...nak", t3x_test, u_loc, a1)
    gls = gls + np.einsum("nca,...nck->...nak", t3x_s1, s1)
    gls = gls + np.einsum("na,...nk->...nak", t2x_a, s0)
    gls = gls + np.einsum("nda,...ndk->...nak", t4xx, u_loc)
    r_u = (r_u + delta[..., None, None] * gls) * area[..., None, None]

    # continuity rows: int div(u) lam_a + delta int strong . grad(lam_a)
    strong_int = np.sum(s1, axis=-2) / 3.0 + s0 + np.einsum("nd,...ndk->...nk", t2x, u_loc)
    gls_div = np.einsum("...nk,...nak->...na", strong_int, grad)
    r_p = (divu[..., None] / 3.0 + delta[..., None] * gls_div) * area[..., None]
    return r_u, r_p


def localize_flow(mesh, state_dofs):
    """Split packed dofs [u interleaved | p] into per-cell local arrays."""
    nv = mesh.num_vertices
    u = state_dofs[..., : 2 * nv].reshape(state_dofs.shape[:-1] + (nv, 2))
    p = state_dofs[..., 2 * nv :]
    return u[..., mesh.cells, :], p[..., mesh.cells]


def flow_dofmap(mesh):
    """Per-cell global dof columns, order [ux0 uy0 ux1 uy1 ux2 uy2 p0 p1 p2]."""
    return np.hstack([vector_dofmap(mesh.cells), 2 * mesh.num_vertices + mesh.cells])


def scatter_flow_vector(mesh, r_u, r_p):
    local = np.concatenate([r_u.reshape(r_u.shape[0], 6), r_p], axis=-1)
    out = np.zeros(3 * mesh.num_vertices, dtype=local.dtype)
    np.add.at(out, flow_dofmap(mesh).ravel(), local.ravel())
    return out


def assemble_ns_residual(mesh, chi, params, state_dofs, delta_override=None):
    """Global raw residual vector (no constrained rows replaced)."""
    u_loc, p_loc = localize_flow(mesh, state_dofs)
    r_u, r_p = flow_element_residual(mesh.geometry, u_loc, p_loc, chi[mesh.cells], params, delta_override)
    return scatter_flow_vector(mesh, r_u, r_p)


def frozen_delta(mesh, chi, params, state_dofs):
    """Cell stabilization parameters evaluated at the current state."""
    u_loc, _ = localize_flow(mesh, state_dofs)
    ubar = np.mean(u_loc, axis=-2)
    chibar = np.mean(chi[mesh.cells], axis=-1)
    return _delta_ns(ubar, mesh.geometry.h, chibar, params.re, params.da, params.beta_gls)


def assemble_ns_system(mesh, chi, params, state_dofs, exact=False):
    """Residual vector and Jacobian of the discrete penalized flow system.

    The Jacobian is the exact derivative of the discrete residual with
    respect to the nodal velocity/pressure unknowns.  By default the cell
    stabilization parameter is frozen at the current state (its velocity
    dependence is dropped from the linearization only); `exact=True`
    differentiates it through as the adjoint solves require.
    """
    if not np.all(np.isfinite(state_dofs)):
        raise AssemblyFailure("non-finite state passed to flow assembly")
    if np.any(chi < -1e-12) or np.any(chi > 1 + 1e-12):
        raise InvalidArgumentError("indicator values must lie in [0, 1]")
    geom = mesh.geometry
    chi_loc = chi[mesh.cells]
    u_loc, p_loc = localize_flow(mesh, state_dofs)
    delta_o = None if exact else frozen_delta(mesh, chi, params, state_dofs)

    # batched complex step over the 9 local dofs; the real part of any batch
    # slot is the unperturbed residual (imaginary steps cancel to round-off)
    u_b = np.broadcast_to(u_loc, (9,) + u_loc.shape).astype(complex).copy()
    p_b = np.broadcast_to(p_loc, (9,) + p_loc.shape).astype(complex).copy()
    for j in range(6):
        u_b[j, :, j // 2, j % 2] += 1j * CS_STEP
    for j in range(3):
        p_b[6 + j, :, j] += 1j * CS_STEP
    ru_b, rp_b = flow_element_residual(geom, u_b, p_b, chi_loc, params, delta_o)
    residual = scatter_flow_vector(mesh, ru_b[0].real, rp_b[0].real)
    cols = np.concatenate([ru_b.reshape(9, -1, 6), rp_b], axis=-1)  # (9, nc, 9)
    jac_loc = np.ascontiguousarray(np.moveaxis(cols.imag / CS_STEP, 0, -1))
    jac = scatter_matrix(flow_dofmap(mesh), jac_loc, 3 * mesh.num_vertices)
    return residual, jac


# ---------------------------------------------------------------------------
# boundary conditions and Newton solve
# ---------------------------------------------------------------------------


@dataclass
class FlowBC:
    """Strong velocity constraints on the packed dof vector."""

    dofs: np.ndarray
    values: np.ndarray

    @classmethod
    def from_masks(cls, mesh, inlet_nodes, inlet_values, zero_nodes):
        """Inlet profile plus homogeneous constraints; inlet wins on overlap."""
        nv = mesh.num_vertices
        vals = np.zeros((nv, 2))
        constrained = np.zeros(nv, dtype=bool)
        constrained[np.asarray(zero_nodes, dtype=int)] = True
        constrained[np.asarray(inlet_nodes, dtype=int)] = True
        vals[np.asarray(inlet_nodes, dtype=int)] = inlet_values
        nodes = np.where(constrained)[0]
        dofs = np.empty(2 * nodes.size, dtype=int)
        dofs[0::2] = 2 * nodes
        dofs[1::2] = 2 * nodes + 1
        values = vals[nodes].ravel()
        return cls(dofs=dofs, values=values)


def constrained_residual(residual, state_dofs, bc: FlowBC):
    r = residual.copy()
    r[bc.dofs] = state_dofs[bc.dofs] - bc.values
    return r


def constrained_jacobian(jac, bc: FlowBC, ndof):
    """Replace constrained rows by identity rows, keep coupling columns."""
    mask = np.zeros(ndof, dtype=bool)
    mask[bc.dofs] = True
    keep = sp.diags((~mask).astype(float))
    return (keep @ jac + sp.diags(mask.astype(float))).tocsr()


def solve_flow(mesh, chi, params, bc: FlowBC, initial=None) -> FlowState:
    """Damped Newton solve of the penalized flow equations.

    Falls back to pseudo-continuation in the Reynolds number (re/4, re/2, re)
    when the cold-started iteration stalls.
    """
    nv = mesh.num_vertices
    state = np.zeros(3 * nv) if initial is None else np.array(initial, dtype=float)
    state[bc.dofs] = bc.values
    try:
        return _newton(mesh, chi, params, bc, state)
    except SolverFailure as first_err:
        history = list(first_err.residual_history)
        state = np.zeros(3 * nv)
        state[bc.dofs] = bc.values
        result = None
        for re_k in (params.re / 4.0, params.re / 2.0, params.re):
            relaxed = dataclasses.replace(params, re=re_k)
            try:
                result = _newton(mesh, chi, relaxed, bc, state)
            except SolverFailure as err:
                raise SolverFailure(
                    f"Newton failed even with continuation at re={re_k:g}",
                    residual_history=history + err.residual_history,
                ) from err
            state = result.dofs()
            history += result.residuals
        result.residuals = history
        return result


def _newton(mesh, chi, params, bc, state):
    nv = mesh.num_vertices
    ndof = 3 * nv
    history = []
    r = constrained_residual(assemble_ns_residual(mesh, chi, params, state), state, bc)
    r0_norm = max(float(np.linalg.norm(r)), 1e-30)
    lu = None
    for _ in range(params.newton_maxiter):
        rnorm = float(np.linalg.norm(r))
        history.append(rnorm)
        if rnorm <= max(params.newton_atol, params.newton_rtol * r0_norm):
            return FlowState(
                velocity=state[: 2 * nv].reshape(nv, 2).copy(),
                pressure=state[2 * nv :].copy(),
                residuals=history,
            )
        # lazy Jacobian: refresh the factorization only when progress with
        # the stale one degrades past linear rate
        if lu is None:
            _, jac = assemble_ns_system(mesh, chi, params, state)
            jac_c = constrained_jacobian(jac, bc, ndof)
            try:
                lu = LUOperator(jac_c)
            except Exception as exc:
                raise SolverFailure(f"linear solve inside Newton failed: {exc}", residual_history=history) from exc
        step = -lu.solve(r)
        # damped update: halve the step while the residual norm increases
        alpha = 1.0
        for _ in range(9):
            trial = state + alpha * step
            r_t = constrained_residual(assemble_ns_residual(mesh, chi, params, trial), trial, bc)
            if np.linalg.norm(r_t) < rnorm or alpha < 1.0 / 256.0:
                break
            alpha *= 0.5
        if np.linalg.norm(r_t) > 0.2 * rnorm or alpha < 1.0:
            lu = None  # stale operator: rebuild next round
        state, r = trial, r_t
    raise SolverFailure(
        f"Newton did not converge in {params.newton_maxiter} iterations",
        residual_history=history,
    )
