"""Level-set design representation.

The nodal P1 scalar phi splits the domain into the cold region (phi < 0)
and the hot region (phi >= 0; zeros count as hot).  This module owns the
phase indicators, pseudo-time transport of phi under a search velocity, and
the elliptic redistancing that restores |grad phi| ~ 1 without moving the
zero isocontour.

All operations take phi by value and return new arrays; nothing here holds
mutable shared state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import AdvectionFailure, InvalidArgumentError, NoInterfaceError, ReinitFailure
from .fem import (
    LUOperator,
    mass_kernel,
    scatter_matrix,
    scatter_vector,
    stiffness_kernel,
    triangle_rule,
)

_GRAD_FLOOR = 1e-10  # floor on |grad phi| in the interface projection


@dataclass
class LevelSetField:
    """Nodal level-set values with the interface cell set cached lazily."""

    phi: np.ndarray
    _interface_cells: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if not np.all(np.isfinite(self.phi)):
            raise InvalidArgumentError("level set contains non-finite values")

    def signs(self):
        """Nodal phase signs; zeros count as the positive (hot) phase."""
        return np.where(self.phi >= 0.0, 1, -1)

    def interface_cells(self, mesh):
        """Cells whose nodal values change sign."""
        if self._interface_cells is None:
            s = self.signs()[mesh.cells]
            mixed = ~np.all(s == s[:, :1], axis=1)
            object.__setattr__(self, "_interface_cells", np.where(mixed)[0])
        return self._interface_cells


@dataclass
class AdvectionSettings:
    """Transport controls: stabilization Peclet number and the adaptive
    backward-Euler step ladder."""

    pe_hj: float = 3200.0
    t_final: float = 0.05
    initial_step: float | None = None  # default: t_final / 4
    growth: float = 1.5
    shrink: float = 0.5
    min_step_fraction: float = 1e-3  # of t_final
    sign: float = 1.0  # +1: d(phi)/dt = +theta_hat . grad(phi) as modeled

    def __post_init__(self):
        if self.pe_hj <= 0:
            raise InvalidArgumentError("pe_hj must be positive")
        if self.t_final <= 0:
            raise InvalidArgumentError("final pseudo-time must be positive")


@dataclass
class ReinitSettings:
    tolerance: float = 1e-3  # relative update norm
    maxiter: int = 50

    def __post_init__(self):
        if self.tolerance <= 0 or self.maxiter < 1:
            raise InvalidArgumentError("bad reinitialization settings")


# ---------------------------------------------------------------------------
# indicators and velocity scale
# ---------------------------------------------------------------------------


def indicator_from_levelset(phi):
    """Nodal phase indicators (chi_H, chi_C): chi_H = 1 where phi >= 0.

    Stored on the P1 space, so values inside interface cells interpolate
    linearly between 0 and 1.
    """
    phi = np.asarray(phi, dtype=float)
    chi_h = np.where(phi >= 0.0, 1.0, 0.0)
    return chi_h, 1.0 - chi_h


def theta_max(theta):
    """Largest nodal 1-norm of the velocity components."""
    theta = np.asarray(theta, dtype=float)
    if theta.size == 0:
        return 0.0
    return float(np.abs(theta).sum(axis=-1).max())


# ---------------------------------------------------------------------------
# pseudo-time transport
# ---------------------------------------------------------------------------


def _transport_matrix(mesh, theta_hat, pe_hj, beta, dt, sign):
    """Backward-Euler step matrix of d(phi)/dt = sign * theta_hat . grad(phi)
    + (1/pe_hj) lap(phi), stabilized along streamlines like the temperature
    equation (the advection operator here is -sign * theta_hat . grad)."""
    lam, w = triangle_rule(4)
    geom = mesh.geometry
    u_loc = theta_hat[mesh.cells]
    uq = np.einsum("qa,nak->nqk", lam, u_loc)
    ubar = np.mean(u_loc, axis=1)
    uu = np.sum(ubar * ubar, axis=-1)
    delta = beta * (4.0 * uu / geom.h**2 + (36.0 / (geom.h**2 * pe_hj)) ** 2) ** -0.5

    adv_b = -sign * np.einsum("nqd,nad->nqa", uq, geom.grad)  # operator on basis b
    wq = w[:, None] * lam
    nc = mesh.num_cells
    local = np.zeros((nc, 3, 3))
    # mass / dt + Galerkin advection + diffusion
    m_ref = np.einsum("q,qa,qb->ab", w, lam, lam)
    local += (geom.area / dt)[:, None, None] * m_ref
    local += geom.area[:, None, None] * np.einsum("qa,nqb->nab", wq, adv_b)
    local += (geom.area / pe_hj)[:, None, None] * np.einsum("nad,nbd->nab", geom.grad, geom.grad)
    # streamline term: delta * (phi/dt + A phi) * (A w); rows a = test
    test = adv_b  # (nc, nq, a)
    strong_b = adv_b + lam[None, :, :] / dt  # operator + transient on basis b
    local += (delta * geom.area)[:, None, None] * np.einsum("q,nqb,nqa->nab", w, strong_b, test)
    mat = scatter_matrix(mesh.cells, local, mesh.num_vertices)

    # rhs operator applied to phi^k: (M/dt) phi + delta * (phi/dt)(A w)
    rhs_local = (geom.area / dt)[:, None, None] * m_ref
    rhs_local = rhs_local + (delta * geom.area / dt)[:, None, None] * np.einsum("q,qb,nqa->nab", w, lam, test)
    rhs_mat = scatter_matrix(mesh.cells, rhs_local, mesh.num_vertices)
    return mat, rhs_mat


def advect_levelset(phi, theta, settings: AdvectionSettings, mesh=None, t_final=None):
    """Transport phi along the normalized search velocity for a pseudo time.

    Backward-Euler steps adapt by shrinking on solve failure and growing on
    success until the accumulated pseudo-time reaches the target; a step
    underflow below the minimum raises.
    """
    if mesh is None:
        raise InvalidArgumentError("advect_levelset requires the mesh")
    phi = np.asarray(phi, dtype=float)
    t_f = float(settings.t_final if t_final is None else t_final)
    if t_f <= 0:
        raise InvalidArgumentError("final pseudo-time must be positive")
    tmax = theta_max(theta)
    if tmax < 1e-12:
        return phi.copy()
    theta_hat = np.asarray(theta, dtype=float) / tmax

    dt = settings.initial_step if settings.initial_step is not None else t_f / 4.0
    dt = min(dt, t_f)
    min_step = settings.min_step_fraction * t_f
    t = 0.0
    current = phi.copy()
    cache = {}
    while t < t_f - 1e-14 * t_f:
        dt_step = min(dt, t_f - t)
        key = round(dt_step / t_f, 12)
        try:
            if key not in cache:
                mat, rhs_mat = _transport_matrix(mesh, theta_hat, settings.pe_hj, 0.9, dt_step, settings.sign)
                cache[key] = (LUOperator(mat), rhs_mat)
            lu, rhs_mat = cache[key]
            nxt = lu.solve(rhs_mat @ current)
            ok = np.all(np.isfinite(nxt))
        except Exception:
            ok = False
        if not ok:
            dt *= settings.shrink
            if dt < min_step:
                raise AdvectionFailure(f"pseudo-time step underflow below {min_step:g}")
            continue
        current = nxt
        t += dt_step
        dt *= settings.growth
    return current


# ---------------------------------------------------------------------------
# redistancing
# ---------------------------------------------------------------------------


def reinit_potential(alpha):
    """Potential and diffusion coefficient of the redistancing problem.

    eta penalizes deviation of |grad phi| from one; its low-slope branch for
    alpha <= 1 removes the singularity at zero gradient.  iota = eta'(a)/a.
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise InvalidArgumentError("gradient magnitude must be nonnegative")
    eta = np.where(alpha > 1.0, 0.5 * (alpha - 1.0) ** 2, alpha**3 / 3.0 - alpha**2 / 2.0 + 1.0 / 6.0)
    with np.errstate(divide="ignore"):
        iota = np.where(alpha > 1.0, 1.0 - 1.0 / np.where(alpha > 1.0, alpha, 1.0), alpha - 1.0)
    if eta.ndim == 0:
        return float(eta), float(iota)
    return eta, iota


def cell_gradient_norm(mesh, phi):
    g = np.einsum("na,nad->nd", phi[mesh.cells], mesh.geometry.grad)
    return np.sqrt(np.sum(g * g, axis=1))


@dataclass
class ProjectionResult:
    nodes: np.ndarray  # node indices of the interface cell set
    values: np.ndarray  # projected values on those nodes
    floored_cells: np.ndarray  # cells where the gradient floor was active


def interface_projection(phi, mesh) -> ProjectionResult:
    """Local L2 projection of phi / |grad phi| over the interface cell set.

    The per-cell gradient magnitude carries a small floor so a vanishing
    gradient inside a sign-change cell stays finite (and is flagged).
    """
    ls = phi if isinstance(phi, LevelSetField) else LevelSetField(np.asarray(phi, dtype=float))
    cells_int = ls.interface_cells(mesh)
    if cells_int.size == 0:
        raise NoInterfaceError("level set does not change sign anywhere")
    phi_v = ls.phi
    cells = mesh.cells[cells_int]
    geom_area = mesh.geometry.area[cells_int]
    grad = mesh.geometry.grad[cells_int]
    gnorm = np.sqrt(np.sum(np.einsum("na,nad->nd", phi_v[cells], grad) ** 2, axis=1))
    floored = gnorm < _GRAD_FLOOR
    gnorm = np.maximum(gnorm, _GRAD_FLOOR)

    nodes = np.unique(cells)
    renum = -np.ones(mesh.num_vertices, dtype=int)
    renum[nodes] = np.arange(nodes.size)
    local_cells = renum[cells]

    lam, w = triangle_rule(2)
    m_ref = np.einsum("q,qa,qb->ab", w, lam, lam)
    m_local = geom_area[:, None, None] * m_ref
    mass = scatter_matrix(local_cells, m_local, nodes.size)
    # rhs: integral of (phi/|grad phi|) lambda_a, with phi P1 per cell
    phi_q = np.einsum("qa,na->nq", lam, phi_v[cells])
    rhs_local = np.einsum("q,nq,qa->na", w, phi_q / gnorm[:, None], lam) * geom_area[:, None]
    rhs = scatter_vector(local_cells, rhs_local, nodes.size)
    values = LUOperator(mass.tocsc()).solve(rhs)

    # projection overshoot must not flip a nodal phase; fall back to the
    # cell-averaged scaling at offending nodes
    bad = np.sign(values) * np.sign(phi_v[nodes]) < 0
    if np.any(bad):
        scale = np.zeros(nodes.size)
        wsum = np.zeros(nodes.size)
        np.add.at(scale, local_cells.ravel(), np.repeat(geom_area / gnorm, 3))
        np.add.at(wsum, local_cells.ravel(), np.repeat(geom_area, 3))
        values[bad] = phi_v[nodes[bad]] * (scale[bad] / wsum[bad])
    return ProjectionResult(nodes=nodes, values=values, floored_cells=cells_int[floored])


def reinitialize(phi, mesh, settings: ReinitSettings | None = None):
    """Restore the level set toward a signed distance function.

    Fixed-point iteration on the elliptic redistancing problem with the
    interface projection values pinned on every node of a sign-change cell,
    which keeps the zero isocontour (the nodal sign pattern there) intact.
    Returns (LevelSetField, iterations_used).
    """
    settings = settings or ReinitSettings()
    ls = phi if isinstance(phi, LevelSetField) else LevelSetField(np.asarray(phi, dtype=float))
    proj = interface_projection(ls, mesh)

    stiff_local = np.einsum("nad,nbd->nab", mesh.geometry.grad, mesh.geometry.grad) * mesh.geometry.area[:, None, None]
    stiffness = scatter_matrix(mesh.cells, stiff_local, mesh.num_vertices)
    mask = np.zeros(mesh.num_vertices, dtype=bool)
    mask[proj.nodes] = True
    keep = sp.diags((~mask).astype(float))
    a = (keep @ stiffness + sp.diags(mask.astype(float))).tocsc()
    lu = LUOperator(a)

    dirichlet = np.zeros(mesh.num_vertices)
    dirichlet[proj.nodes] = proj.values

    current = ls.phi.copy()
    current[proj.nodes] = proj.values
    grad = mesh.geometry.grad
    area = mesh.geometry.area
    update_norms = []
    for it in range(1, settings.maxiter + 1):
        g = np.einsum("na,nad->nd", current[mesh.cells], grad)
        gnorm = np.sqrt(np.sum(g * g, axis=1))
        _, iota = reinit_potential(gnorm)
        coeff = (1.0 - iota) * area
        rhs_local = np.einsum("nd,nad->na", coeff[:, None] * g, grad)
        rhs = scatter_vector(mesh.cells, rhs_local, mesh.num_vertices)
        rhs[mask] = dirichlet[mask]
        nxt = lu.solve(rhs)
        delta = np.linalg.norm(nxt - current) / max(np.linalg.norm(nxt), 1e-30)
        update_norms.append(float(delta))
        current = nxt
        if delta <= settings.tolerance:
            return LevelSetField(current), it
    raise ReinitFailure(
        f"redistancing did not reach {settings.tolerance:g} in {settings.maxiter} iterations",
        update_norms=update_norms,
    )
