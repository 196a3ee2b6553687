"""Coupled two-fluid flow + temperature system and its output functionals.

A `CoupledSystem` bundles everything one design evaluation needs: the mesh,
the per-fluid penalization indicators, parameters, strong boundary data and
the functional definitions.  The sensitivity layer differentiates exactly
the discrete residuals and functionals defined here, so the facet
quadrature below is written to accept complex vertex coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .fem import DirichletBC, facet_geometry, facet_rule
from .flow import FlowBC, FlowParams, FlowState, solve_flow
from .thermal import ThermalParams, ThermalState, combined_velocity, solve_temperature


@dataclass
class HeatFluxFunctional:
    """Advective heat flux through a boundary strip: integral of T (u_C . n)."""

    outlet_tag: str


@dataclass
class PressureDropFunctional:
    """Raw pressure integral difference between two boundary strips."""

    fluid: str  # "cold" or "hot"
    inlet_tag: str
    outlet_tag: str


@dataclass
class CoupledSystem:
    mesh: object
    chi_cold_pen: np.ndarray  # indicator penalizing the cold momentum (hot region)
    chi_hot_pen: np.ndarray  # indicator penalizing the hot momentum (cold region)
    params_cold: FlowParams
    params_hot: FlowParams
    params_thermal: ThermalParams
    bc_cold: FlowBC
    bc_hot: FlowBC
    bc_thermal: DirichletBC
    functionals: dict = field(default_factory=dict)
    # optional nodal-pointwise regenerators of the strong values from vertex
    # coordinates (used for coordinate derivatives of the inlet profiles)
    bc_cold_value_fn: object = None
    bc_hot_value_fn: object = None

    def flow_bundle(self, fluid):
        if fluid == "cold":
            return self.chi_cold_pen, self.params_cold, self.bc_cold, self.bc_cold_value_fn
        if fluid == "hot":
            return self.chi_hot_pen, self.params_hot, self.bc_hot, self.bc_hot_value_fn
        raise InvalidArgumentError(f"unknown fluid {fluid!r}")


@dataclass
class PrimalStates:
    cold: FlowState
    hot: FlowState
    thermal: ThermalState

    def combined_velocity(self):
        return self.cold.velocity + self.hot.velocity


def solve_coupled(system: CoupledSystem, warm: PrimalStates | None = None) -> PrimalStates:
    """Forward solve: both penalized flows, then the shared temperature."""
    cold = solve_flow(
        system.mesh,
        system.chi_cold_pen,
        system.params_cold,
        system.bc_cold,
        initial=warm.cold.dofs() if warm is not None else None,
    )
    hot = solve_flow(
        system.mesh,
        system.chi_hot_pen,
        system.params_hot,
        system.bc_hot,
        initial=warm.hot.dofs() if warm is not None else None,
    )
    u_comb, leak = combined_velocity(
        system.mesh, system.chi_hot_pen, cold.velocity, hot.velocity, system.params_cold.v_max
    )
    thermal = solve_temperature(system.mesh, u_comb, system.params_thermal, bc=system.bc_thermal, leakage=leak)
    return PrimalStates(cold=cold, hot=hot, thermal=thermal)


# ---------------------------------------------------------------------------
# facet quadrature shared by the functionals and their derivatives
# ---------------------------------------------------------------------------


def facet_chunks(mesh, tag):
    """(facet node pairs, opposite vertices) for all facets carrying tag."""
    facets = mesh.facets_with(tag)
    if facets.size == 0:
        raise InvalidArgumentError(f"unknown or empty boundary tag {tag!r}")
    return mesh.facets[facets], mesh.facet_opposite[facets]


def heat_flux(mesh, temperature, velocity, outlet_tag, vertices=None):
    """Integral of T (u . n) over the tagged strip; complex-capable in the
    vertex coordinates (nodal data ride along unchanged)."""
    pairs, opp = facet_chunks(mesh, outlet_tag)
    verts = mesh.vertices if vertices is None else vertices
    length, normal = facet_geometry(verts[pairs[:, 0]], verts[pairs[:, 1]], mesh.vertices[opp])
    s, w = facet_rule(3)
    t0, t1 = temperature[pairs[:, 0]], temperature[pairs[:, 1]]
    u0, u1 = velocity[pairs[:, 0]], velocity[pairs[:, 1]]
    tq = t0[:, None] * (1 - s) + t1[:, None] * s
    uq = u0[:, None, :] * (1 - s)[None, :, None] + u1[:, None, :] * s[None, :, None]
    un = np.sum(uq * normal[:, None, :], axis=-1)
    return np.sum(length[:, None] * w[None, :] * tq * un)


def strip_integral(mesh, nodal, tag, vertices=None):
    """Integral of a nodal P1 scalar over the tagged strip."""
    pairs, opp = facet_chunks(mesh, tag)
    verts = mesh.vertices if vertices is None else vertices
    length, _ = facet_geometry(verts[pairs[:, 0]], verts[pairs[:, 1]], mesh.vertices[opp])
    # exact for P1 data: trapezoid per facet
    return np.sum(length * 0.5 * (nodal[pairs[:, 0]] + nodal[pairs[:, 1]]))


def functional_value(system: CoupledSystem, states: PrimalStates, name: str, vertices=None):
    """Functional value; complex when complex vertex coordinates are passed."""
    spec = system.functionals[name]
    if isinstance(spec, HeatFluxFunctional):
        return heat_flux(
            system.mesh, states.thermal.temperature, states.cold.velocity, spec.outlet_tag, vertices=vertices
        )
    if isinstance(spec, PressureDropFunctional):
        p = states.cold.pressure if spec.fluid == "cold" else states.hot.pressure
        return strip_integral(system.mesh, p, spec.inlet_tag, vertices=vertices) - strip_integral(
            system.mesh, p, spec.outlet_tag, vertices=vertices
        )
    raise InvalidArgumentError(f"unknown functional kind {type(spec).__name__}")


def evaluate_functional(system: CoupledSystem, states: PrimalStates, name: str) -> float:
    return float(np.real(functional_value(system, states, name)))


def functional_state_gradient(system: CoupledSystem, states: PrimalStates, name: str):
    """Partial derivatives of a functional with respect to the packed state
    vectors: (d/ds_cold (3nv,), d/ds_hot (3nv,), d/dT (nv,))."""
    mesh = system.mesh
    nv = mesh.num_vertices
    d_cold = np.zeros(3 * nv)
    d_hot = np.zeros(3 * nv)
    d_t = np.zeros(nv)
    spec = system.functionals[name]
    s, w = facet_rule(3)
    if isinstance(spec, HeatFluxFunctional):
        pairs, opp = facet_chunks(mesh, spec.outlet_tag)
        length, normal = facet_geometry(
            mesh.vertices[pairs[:, 0]], mesh.vertices[pairs[:, 1]], mesh.vertices[opp]
        )
        t0 = states.thermal.temperature[pairs[:, 0]]
        t1 = states.thermal.temperature[pairs[:, 1]]
        u0 = states.cold.velocity[pairs[:, 0]]
        u1 = states.cold.velocity[pairs[:, 1]]
        tq = t0[:, None] * (1 - s) + t1[:, None] * s
        uq = u0[:, None, :] * (1 - s)[None, :, None] + u1[:, None, :] * s[None, :, None]
        un = np.sum(uq * normal[:, None, :], axis=-1)
        basis = np.stack([1 - s, s])  # (2, nq)
        # dJ/dT_a = int basis_a (u.n);  dJ/du_(a,k) = int T basis_a n_k
        dt_loc = np.einsum("f,aq,fq->fa", length, basis * w, un)
        du_loc = np.einsum("f,aq,fq,fk->fak", length, basis * w, tq, normal)
        np.add.at(d_t, pairs, dt_loc)
        for k in range(2):
            np.add.at(d_cold, 2 * pairs + k, du_loc[:, :, k])
    elif isinstance(spec, PressureDropFunctional):
        target = d_cold if spec.fluid == "cold" else d_hot
        for tag, sign in ((spec.inlet_tag, 1.0), (spec.outlet_tag, -1.0)):
            pairs, opp = facet_chunks(mesh, tag)
            length, _ = facet_geometry(
                mesh.vertices[pairs[:, 0]], mesh.vertices[pairs[:, 1]], mesh.vertices[opp]
            )
            np.add.at(target, 2 * nv + pairs, sign * 0.5 * length[:, None] * np.ones((1, 2)))
    else:
        raise InvalidArgumentError(f"unknown functional kind {type(spec).__name__}")
    return d_cold, d_hot, d_t
