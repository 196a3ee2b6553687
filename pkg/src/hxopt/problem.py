"""Heat-exchanger problem definitions, configuration and assembly.

The design domain is a unit square (desk scale) carrying four port strips
on its left and right edges:

    g1 = left edge, lower strip      g2 = left edge, upper strip
    g4 = right edge, lower strip     g3 = right edge, upper strip

Configurations assign the strips to cold/hot inlet and outlet roles:

    parallel:  cold g1 -> g4, hot g2 -> g3   (both streams left to right)
    counter:   cold g4 -> g1, hot g2 -> g3   (cold stream reversed)
    u-flow:    cold g3 -> g4, hot g2 -> g1   (each stream turns back)

Each port owns a buffer rectangle reaching into the domain where the flow
develops: the buffer's phase is part of the problem definition (not of the
design), the counterpart fluid is pinned to zero velocity there, and the
design velocity is constrained to vanish on buffer nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .fem import DirichletBC
from .flow import FlowBC, FlowParams
from .levelset import (
    AdvectionSettings,
    ReinitSettings,
    advect_levelset,
    indicator_from_levelset,
    reinitialize,
)
from .mesh import Mesh, build_structured_mesh
from .sensitivity import AdjointWorkspace, ExtensionSettings, HilbertianExtender, shape_gradients
from .system import (
    CoupledSystem,
    HeatFluxFunctional,
    PressureDropFunctional,
    evaluate_functional,
    heat_flux,
    solve_coupled,
    strip_integral,
)
from .thermal import ThermalParams

PORT_ROLE_MAPS = {
    "parallel": {"cold_in": "g1", "hot_in": "g2", "cold_out": "g4", "hot_out": "g3"},
    "counter": {"cold_in": "g4", "hot_in": "g2", "cold_out": "g1", "hot_out": "g3"},
    "u-flow": {"cold_in": "g3", "hot_in": "g2", "cold_out": "g4", "hot_out": "g1"},
}

# strip -> (edge, which configured center it uses)
PORT_GEOMETRY = {"g1": ("left", "low"), "g2": ("left", "high"), "g3": ("right", "high"), "g4": ("right", "low")}


@dataclass
class ProblemConfig:
    """Flat problem description; every field can appear in a config file."""

    kind: str = "parallel"
    resolution: int = 64
    extent: float = 1.0
    re: float = 10.0
    pe: float = 5.0e3
    da: float = 1.0e-5
    p_drop: float = 2.0
    beta_gls: float = 0.9
    gamma: float = 0.4
    c1: float = 1.0e4
    pe_hj: float = 0.0  # 0 -> 50 * resolution
    v_max: float = 1.0
    port_width: float = 0.2
    port_center_low: float = 0.25
    port_center_high: float = 0.75
    buffer_depth: float = 0.15
    init_frequency: float = 4.0  # initial design sin(f pi y) cos(f pi x) - threshold
    init_threshold: float = 0.2
    advection_sign: float = -1.0  # -1 transports the domain along +theta; +1 is the as-modeled form
    alpha_j: float = 1.0
    alpha_c: float = 1.0
    t_final: float = 0.04
    maxtrials: int = 5
    d_max: float = 0.08
    maxiter: int = 100
    tol: float = 0.0
    reinit_tol: float = 1.0e-3
    reinit_maxiter: int = 50
    newton_rtol: float = 1.0e-8
    newton_atol: float = 1.0e-9
    snapshot_every: int = 10

    def __post_init__(self):
        if self.kind not in PORT_ROLE_MAPS:
            raise InvalidArgumentError(f"unknown configuration kind {self.kind!r}")
        if self.resolution < 1:
            raise InvalidArgumentError("resolution must be at least 1")
        if self.extent <= 0:
            raise InvalidArgumentError("extent must be positive")
        if self.port_width <= 0 or self.port_width >= self.extent:
            raise InvalidArgumentError("port width must lie inside the edge")
        lo, hi = sorted((self.port_center_low, self.port_center_high))
        if (hi - lo) * self.extent < self.port_width + 1e-12:
            raise InvalidArgumentError("port strips overlap")
        if self.advection_sign not in (-1.0, 1.0):
            raise InvalidArgumentError("advection_sign must be +1 or -1")

    def effective_pe_hj(self):
        return self.pe_hj if self.pe_hj > 0 else 50.0 * self.resolution


def desk_preset(kind: str = "parallel", **overrides) -> ProblemConfig:
    """Desk-scale preset: coarse-mesh Peclet number (documented deviation
    from the reference operating point Pe=5e3) and the square 64 mesh."""
    values = dict(kind=kind, pe=1.0e3)
    values.update(overrides)
    return ProblemConfig(**values)


# ---------------------------------------------------------------------------
# functional wrappers
# ---------------------------------------------------------------------------


def cost_functional(thermal_state, cold_state, mesh, outlet_tag) -> float:
    """Advective heat flux through the cold outlet: integral of T (u_C . n)."""
    return float(np.real(heat_flux(mesh, thermal_state.temperature, cold_state.velocity, outlet_tag)))


def pressure_drop(pressure, mesh, inlet_tag, outlet_tag) -> float:
    """Raw strip integrals (not averages): int_in p - int_out p."""
    return float(strip_integral(mesh, pressure, inlet_tag) - strip_integral(mesh, pressure, outlet_tag))


# ---------------------------------------------------------------------------
# problem assembly
# ---------------------------------------------------------------------------


def _strip_interval(config, which):
    half = 0.5 * config.port_width
    frac = config.port_center_low if which == "low" else config.port_center_high
    c = frac * config.extent
    return c - half, c + half


def _tag_ports(mesh, config):
    mids = mesh.facet_midpoints()
    out = mesh
    for name, (edge, center) in PORT_GEOMETRY.items():
        a, b = _strip_interval(config, center)
        on_edge = out.facets_with(edge)
        sel = on_edge[(mids[on_edge, 1] >= a) & (mids[on_edge, 1] <= b)]
        if sel.size == 0:
            raise InvalidArgumentError(f"port strip {name} captured no facets; refine the mesh")
        out = out.retag(name, sel)
    return out


@dataclass
class HXProblem:
    """Assembled problem: mesh, tags, buffers, initial design and solver
    parameter bundles.  Implements the protocol the descent loop drives."""

    config: ProblemConfig
    mesh: Mesh
    ports: dict
    phi0: np.ndarray
    buffer_cold: np.ndarray  # node mask: buffers owned by the cold stream
    buffer_hot: np.ndarray
    fixed_nodes: np.ndarray  # design held fixed here (all buffer nodes)
    bc_thermal: DirichletBC
    _extender: HilbertianExtender | None = field(default=None, repr=False)
    _inner_extender: HilbertianExtender | None = field(default=None, repr=False)

    # -- protocol -----------------------------------------------------------

    @property
    def da0(self):
        return self.config.da

    def tighten(self, da):
        """Strengthen the penalization after first reaching feasibility."""
        return da / 10.0

    def initial_phi(self):
        return self.phi0.copy()

    def chi_fields(self, phi):
        """Nodal indicators with the buffer phases pinned."""
        chi_h, chi_c = indicator_from_levelset(phi)
        chi_h[self.buffer_cold] = 0.0
        chi_c[self.buffer_cold] = 1.0
        chi_h[self.buffer_hot] = 1.0
        chi_c[self.buffer_hot] = 0.0
        return chi_h, chi_c

    def _inlet_profile(self, role):
        """(nodes, values, value_fn) of the parabolic inlet for a role."""
        cfg = self.config
        tag = self.ports[role]
        edge, center = PORT_GEOMETRY[tag]
        a, b = _strip_interval(cfg, center)
        direction = 1.0 if edge == "left" else -1.0
        nodes = self.mesh.nodes_with(tag)

        def value_fn(verts, nodes=nodes, a=a, b=b, direction=direction):
            y = verts[nodes, 1]
            prof = 4.0 * cfg.v_max * (y - a) * (b - y) / (b - a) ** 2
            prof = np.where(prof.real > 0.0, prof, 0.0 * prof)
            vals = np.zeros((verts.shape[0], 2), dtype=verts.dtype)
            vals[nodes, 0] = direction * prof
            return vals

        values = value_fn(self.mesh.vertices)[nodes]
        return nodes, values, value_fn

    def _flow_bc(self, fluid):
        """Strong data for one fluid: inlet profile, walls everywhere else on
        the boundary except its outlet interior, zero in the counterpart
        buffers."""
        inlet_role = f"{fluid}_in"
        outlet_role = f"{fluid}_out"
        mesh = self.mesh
        inlet_nodes, inlet_values, value_fn = self._inlet_profile(inlet_role)

        outlet_tag = self.ports[outlet_role]
        boundary_nodes = np.unique(mesh.facets)
        outlet_facets = mesh.facets_with(outlet_tag)
        outlet_nodes = np.unique(mesh.facets[outlet_facets])
        # outlet nodes also touching a differently-tagged facet stay walls
        other = np.setdiff1d(np.arange(mesh.facets.shape[0]), outlet_facets)
        touched = np.unique(mesh.facets[other])
        outlet_free = np.setdiff1d(outlet_nodes, touched)

        counterpart_buffer = self.buffer_hot if fluid == "cold" else self.buffer_cold
        zero_nodes = np.setdiff1d(boundary_nodes, np.concatenate([outlet_free, inlet_nodes]))
        zero_nodes = np.union1d(zero_nodes, np.where(counterpart_buffer)[0])

        bc = FlowBC.from_masks(mesh, inlet_nodes, inlet_values, zero_nodes)

        def packed_value_fn(verts, bc=bc, value_fn=value_fn):
            return value_fn(verts).reshape(-1)[bc.dofs]

        return bc, packed_value_fn

    def build_system(self, phi, da) -> CoupledSystem:
        cfg = self.config
        chi_h, chi_c = self.chi_fields(phi)
        flow_kwargs = dict(
            re=cfg.re,
            da=da,
            beta_gls=cfg.beta_gls,
            v_max=cfg.v_max,
            newton_rtol=cfg.newton_rtol,
            newton_atol=cfg.newton_atol,
        )
        bc_cold, fn_cold = self._flow_bc("cold")
        bc_hot, fn_hot = self._flow_bc("hot")
        return CoupledSystem(
            mesh=self.mesh,
            chi_cold_pen=chi_h,
            chi_hot_pen=chi_c,
            params_cold=FlowParams(inlet_tag=self.ports["cold_in"], outlet_tag=self.ports["cold_out"], **flow_kwargs),
            params_hot=FlowParams(inlet_tag=self.ports["hot_in"], outlet_tag=self.ports["hot_out"], **flow_kwargs),
            params_thermal=ThermalParams(
                pe=cfg.pe,
                beta_gls=cfg.beta_gls,
                cold_inlet_tag=self.ports["cold_in"],
                hot_inlet_tag=self.ports["hot_in"],
            ),
            bc_cold=bc_cold,
            bc_hot=bc_hot,
            bc_thermal=self.bc_thermal,
            functionals={
                "J": HeatFluxFunctional(outlet_tag=self.ports["cold_out"]),
                "G1": PressureDropFunctional("cold", self.ports["cold_in"], self.ports["cold_out"]),
                "G2": PressureDropFunctional("hot", self.ports["hot_in"], self.ports["hot_out"]),
            },
            bc_cold_value_fn=fn_cold,
            bc_hot_value_fn=fn_hot,
        )

    def solve(self, phi, da, warm=None):
        system = self.build_system(phi, da)
        warm_states = warm[1] if warm is not None else None
        states = solve_coupled(system, warm=warm_states)
        return (system, states)

    def functionals(self, payload):
        system, states = payload
        return (
            evaluate_functional(system, states, "J"),
            evaluate_functional(system, states, "G1"),
            evaluate_functional(system, states, "G2"),
        )

    @property
    def extender(self) -> HilbertianExtender:
        if self._extender is None:
            settings = ExtensionSettings(gamma=self.config.gamma, c1=self.config.c1)
            self._extender = HilbertianExtender(self.mesh, settings, fixed_nodes=np.where(self.fixed_nodes)[0])
        return self._extender

    def velocities(self, phi, payload, da):
        system, states = payload
        workspace = AdjointWorkspace(system, states)
        adjoints = {name: workspace.solve(name) for name in ("J", "G1", "G2")}
        grads = shape_gradients(system, states, adjoints)
        zeta_jhat = self.extender.extend(-grads["J"])  # minimized objective is -J
        zeta_g1 = self.extender.extend(grads["G1"])
        zeta_g2 = self.extender.extend(grads["G2"])
        return zeta_jhat, [zeta_g1, zeta_g2]

    def b_inner(self, za, zb):
        return self.extender.inner(za, zb)

    def advection_settings(self):
        return AdvectionSettings(
            pe_hj=self.config.effective_pe_hj(),
            t_final=self.config.t_final,
            sign=self.config.advection_sign,
        )

    def advect(self, phi, theta, t_hat):
        return advect_levelset(phi, theta, self.advection_settings(), mesh=self.mesh, t_final=t_hat)

    def reinitialize(self, phi):
        settings = ReinitSettings(tolerance=self.config.reinit_tol, maxiter=self.config.reinit_maxiter)
        field_out, _ = reinitialize(phi, self.mesh, settings)
        return field_out.phi

    def optimizer_config(self):
        from .optimizer import OptimizerConfig

        cfg = self.config
        return OptimizerConfig(
            alpha_j=cfg.alpha_j,
            alpha_c=cfg.alpha_c,
            t_final=cfg.t_final,
            maxtrials=cfg.maxtrials,
            d_max=cfg.d_max,
            maxiter=cfg.maxiter,
            tol=cfg.tol,
            p_drop=cfg.p_drop,
        )

    # -- diagnostics ---------------------------------------------------------

    def cross_outlet_leakage(self, payload):
        """Cold volumetric flux through the hot outlet relative to the cold
        inlet flux (the non-mixing figure)."""
        system, states = payload
        mesh = self.mesh
        out = abs(
            float(
                np.real(
                    heat_flux(
                        mesh,
                        np.ones(mesh.num_vertices),
                        states.cold.velocity,
                        self.ports["hot_out"],
                    )
                )
            )
        )
        inflow = abs(
            float(
                np.real(
                    heat_flux(mesh, np.ones(mesh.num_vertices), states.cold.velocity, self.ports["cold_in"])
                )
            )
        )
        return out / max(inflow, 1e-30)


def initial_levelset(config: ProblemConfig, vertices) -> np.ndarray:
    """Nodal sample of the oscillatory seed design."""
    f = config.init_frequency * np.pi / config.extent
    x, y = vertices[:, 0], vertices[:, 1]
    return np.sin(f * y) * np.cos(f * x) - config.init_threshold


def build_problem(config: ProblemConfig) -> HXProblem:
    """Mesh, port tags, buffers and the redistanced initial design."""
    mesh = build_structured_mesh(config.resolution, (config.extent, config.extent))
    mesh = _tag_ports(mesh, config)
    roles = PORT_ROLE_MAPS[config.kind]

    nv = mesh.num_vertices
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    tol = 1e-12
    buffer_cold = np.zeros(nv, dtype=bool)
    buffer_hot = np.zeros(nv, dtype=bool)
    for role, tag in roles.items():
        edge, center = PORT_GEOMETRY[tag]
        a, b = _strip_interval(config, center)
        if edge == "left":
            in_x = x <= config.buffer_depth + tol
        else:
            in_x = x >= config.extent - config.buffer_depth - tol
        box = in_x & (y >= a - tol) & (y <= b + tol)
        if role.startswith("cold"):
            buffer_cold |= box
        else:
            buffer_hot |= box
    if np.any(buffer_cold & buffer_hot):
        raise InvalidArgumentError("port buffers overlap; shrink widths or depth")

    cold_in = mesh.nodes_with(roles["cold_in"])
    hot_in = mesh.nodes_with(roles["hot_in"])
    bc_thermal = DirichletBC(
        dofs=np.concatenate([cold_in, hot_in]),
        values=np.concatenate([np.zeros(cold_in.size), np.ones(hot_in.size)]),
    )

    phi0 = initial_levelset(config, mesh.vertices)
    problem = HXProblem(
        config=config,
        mesh=mesh,
        ports=dict(roles),
        phi0=phi0,
        buffer_cold=buffer_cold,
        buffer_hot=buffer_hot,
        fixed_nodes=buffer_cold | buffer_hot,
        bc_thermal=bc_thermal,
    )
    # start from a clean near-distance function (the seed expression has
    # gradient magnitudes far from one)
    problem.phi0 = problem.reinitialize(phi0)
    return problem
