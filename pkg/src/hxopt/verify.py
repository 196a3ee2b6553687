"""Analytic and consistency verification suites.

Each suite returns (ok, detail) and is runnable standalone or through the
`hxopt verify` subcommand.  The suites pin the solver stack against closed
forms (plane channel flow, one-dimensional transport), against limit
behavior (penalization leakage), and against independent derivative oracles
(re-solved Taylor remainders, dense algebra identities).
"""

from __future__ import annotations

import numpy as np

from .fem import DirichletBC, facet_geometry, integrate_boundary
from .flow import FlowBC, FlowParams, solve_flow
from .levelset import LevelSetField, ReinitSettings, cell_gradient_norm, reinitialize
from .mesh import Mesh, build_structured_mesh
from .sensitivity import AdjointWorkspace, ExtensionSettings, HilbertianExtender, shape_gradients
from .system import (
    CoupledSystem,
    HeatFluxFunctional,
    PressureDropFunctional,
    evaluate_functional,
    solve_coupled,
)
from .thermal import ThermalParams, solve_temperature


def poiseuille_channel(resolution=(96, 32), re=10.0, chi=None, da=1e-5):
    """Plane channel with a parabolic inlet; returns (mesh, state)."""
    mesh = build_structured_mesh(resolution, (3.0, 1.0))
    nv = mesh.num_vertices
    chi_arr = np.zeros(nv) if chi is None else chi(mesh)
    params = FlowParams(re=re, da=da)
    inlet = mesh.nodes_with("left")
    y = mesh.vertices[inlet, 1]
    vals = np.column_stack([4 * y * (1 - y), np.zeros_like(y)])
    walls = np.union1d(mesh.nodes_with("top"), mesh.nodes_with("bottom"))
    bc = FlowBC.from_masks(mesh, inlet, vals, walls)
    return mesh, solve_flow(mesh, chi_arr, params, bc)


def suite_poiseuille(resolution=(96, 32)):
    mesh, state = poiseuille_channel(resolution)
    mid = np.abs(mesh.vertices[:, 0] - 1.5) < 1e-9
    y = mesh.vertices[mid, 1]
    profile_err = float(np.abs(state.velocity[mid, 0] - 4 * y * (1 - y)).max())
    drop = integrate_boundary(state.pressure, mesh, "left") - integrate_boundary(state.pressure, mesh, "right")
    drop_err = abs(drop - 2.4) / 2.4
    ok = profile_err <= 0.02 and drop_err <= 0.03
    return ok, f"profile max err {profile_err:.4f} (<=0.02), pressure drop {drop:.4f} rel err {drop_err:.4f} (<=0.03)"


def suite_advection_diffusion(cells=200):
    mesh = build_structured_mesh((cells, 1), (1.0, 1.0 / cells))
    params = ThermalParams(pe=10.0, cold_inlet_tag="left", hot_inlet_tag="right")
    u = np.zeros((mesh.num_vertices, 2))
    u[:, 0] = 1.0
    state = solve_temperature(mesh, u, params)
    x = mesh.vertices[:, 0]
    exact = np.expm1(10.0 * x) / np.expm1(10.0)
    err = float(np.abs(state.temperature - exact).max())
    return err <= 0.01, f"sup-norm error {err:.2e} (<=0.01)"


def _duct_chi(mesh):
    """Penalize everything except a straight duct and the end strips."""
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    open_region = (np.abs(y - 0.5) <= 0.15 + 1e-12) | (x <= 0.2 + 1e-12) | (x >= 2.8 - 1e-12)
    return np.where(open_region, 0.0, 1.0)


def _strictly_penalized(mesh, chi):
    cells = mesh.cells
    full = chi[cells].min(axis=1) >= 1.0
    nv = mesh.num_vertices
    strict = np.zeros(nv, dtype=bool)
    strict[cells[full].ravel()] = True
    strict &= ~np.isin(np.arange(nv), cells[~full].ravel())
    x = mesh.vertices[:, 0]
    return strict & (x > 0.25) & (x < 2.75)


def suite_brinkmann(resolution=(96, 32)):
    """Forced flow keeps an open path; the penalized complement must see
    only permeability-limited leakage, shrinking with the penalization."""
    leaks = []
    for da in (1e-5, 1e-6):
        mesh, state = poiseuille_channel(resolution, chi=_duct_chi, da=da)
        strict = _strictly_penalized(mesh, _duct_chi(mesh))
        leaks.append(float(np.linalg.norm(state.velocity[strict], axis=1).max()))
    ok = leaks[0] <= 0.05 and leaks[1] <= leaks[0]
    return ok, f"penalized-region max speed {leaks[0]:.2e} (<=0.05 at Da=1e-5), {leaks[1]:.2e} at Da=1e-6 (monotone)"


# ---------------------------------------------------------------------------
# coupled demo problem (also used by the derivative suites and the tests)
# ---------------------------------------------------------------------------


def demo_coupled_system(n=8, vertices=None, tight=True):
    """Small fully-coupled two-fluid problem on the unit square: cold stream
    left to right, hot stream bottom to top, phases from a frozen smooth
    seed.  `vertices` overrides node coordinates (same topology), which the
    Taylor oracles use to re-solve on perturbed geometry."""
    base = build_structured_mesh(n, (1.0, 1.0))
    mesh = base if vertices is None else Mesh(
        vertices, base.cells, base.facets, base.facet_cell, base.facet_tag, base.tag_names
    )
    xy0 = base.vertices
    phi = np.sin(2 * np.pi * xy0[:, 1]) * np.cos(2 * np.pi * xy0[:, 0]) - 0.2
    chi_h = np.where(phi >= 0, 1.0, 0.0)
    chi_c = 1.0 - chi_h

    left, right = mesh.nodes_with("left"), mesh.nodes_with("right")
    bottom, top = mesh.nodes_with("bottom"), mesh.nodes_with("top")

    cold_walls = np.setdiff1d(np.union1d(bottom, top), right)
    y = mesh.vertices[left, 1]
    bc_cold = FlowBC.from_masks(mesh, left, np.column_stack([4 * y * (1 - y), np.zeros_like(y)]), cold_walls)

    def cold_value_fn(verts):
        vals = np.zeros((verts.shape[0], 2), dtype=verts.dtype)
        yy = verts[left, 1]
        vals[left, 0] = 4.0 * yy * (1.0 - yy)
        return vals.reshape(-1)[bc_cold.dofs]

    hot_walls = np.setdiff1d(np.union1d(left, right), top)
    x = mesh.vertices[bottom, 0]
    bc_hot = FlowBC.from_masks(mesh, bottom, np.column_stack([np.zeros_like(x), 4 * x * (1 - x)]), hot_walls)

    def hot_value_fn(verts):
        vals = np.zeros((verts.shape[0], 2), dtype=verts.dtype)
        xx = verts[bottom, 0]
        vals[bottom, 1] = 4.0 * xx * (1.0 - xx)
        return vals.reshape(-1)[bc_hot.dofs]

    bottom_only = np.setdiff1d(bottom, left)
    bc_t = DirichletBC(
        dofs=np.concatenate([left, bottom_only]),
        values=np.concatenate([np.zeros(left.size), np.ones(bottom_only.size)]),
    )

    tolmul = dict(newton_rtol=1e-12, newton_atol=1e-13) if tight else {}
    params = dict(re=10.0, da=1e-3, beta_gls=0.9, **tolmul)
    return CoupledSystem(
        mesh=mesh,
        chi_cold_pen=chi_h,
        chi_hot_pen=chi_c,
        params_cold=FlowParams(**params),
        params_hot=FlowParams(**params),
        params_thermal=ThermalParams(pe=50.0, cold_inlet_tag="left", hot_inlet_tag="bottom"),
        bc_cold=bc_cold,
        bc_hot=bc_hot,
        bc_thermal=bc_t,
        functionals={
            "J": HeatFluxFunctional(outlet_tag="right"),
            "G1": PressureDropFunctional("cold", "left", "right"),
            "G2": PressureDropFunctional("hot", "bottom", "top"),
        },
        bc_cold_value_fn=cold_value_fn,
        bc_hot_value_fn=hot_value_fn,
    )


def taylor_orders(n=8, seed=7, eps_list=(1e-2, 1e-3, 1e-4), names=("J", "G1", "G2"), trials=3):
    """Observed Taylor-remainder orders of the shape gradients, re-solving
    the coupled state on each perturbed geometry."""
    sys0 = demo_coupled_system(n=n)
    states = solve_coupled(sys0)
    ws = AdjointWorkspace(sys0, states)
    grads = shape_gradients(sys0, states, {name: ws.solve(name) for name in names})
    rng = np.random.default_rng(seed)
    base = sys0.mesh.vertices
    orders = {}
    for name in names:
        j0 = evaluate_functional(sys0, states, name)
        per_trial = []
        for _ in range(trials):
            xi = rng.standard_normal(base.shape)
            xi /= np.abs(xi).max() * 2.0
            dj = grads[name](xi)
            remainders = []
            for eps in eps_list:
                sys_p = demo_coupled_system(n=n, vertices=base + eps * xi)
                st_p = solve_coupled(sys_p, warm=states)
                remainders.append(abs(evaluate_functional(sys_p, st_p, name) - j0 - eps * dj))
            per_trial.append(
                [
                    np.log(remainders[i] / remainders[i + 1]) / np.log(eps_list[i] / eps_list[i + 1])
                    for i in range(len(eps_list) - 1)
                ]
            )
        orders[name] = per_trial
    return orders


def suite_taylor(n=8):
    orders = taylor_orders(n=n)
    worst = min(min(min(pair) for pair in trials) for trials in orders.values())
    return worst >= 1.9, f"minimum observed order {worst:.3f} (>=1.9) over J, G1, G2 x 3 perturbations"


def suite_reinit(n=64):
    mesh = build_structured_mesh(n, (1.0, 1.0))
    r = np.linalg.norm(mesh.vertices - 0.5, axis=1)
    phi = 2.0 * (r - 0.25)
    out, iters = reinitialize(phi, mesh, ReinitSettings())
    g = cell_gradient_norm(mesh, out.phi)
    cent = mesh.vertices[mesh.cells].mean(axis=1)
    margin = 2.0 / n
    interior = np.all((cent > margin) & (cent < 1 - margin), axis=1)
    frac = float(np.mean((g[interior] >= 0.93) & (g[interior] <= 1.07)))
    before = LevelSetField(phi)
    cells_before = before.interface_cells(mesh)
    nodes = np.unique(mesh.cells[cells_before])
    signs_ok = bool(np.array_equal(np.sign(out.phi[nodes]), np.sign(phi[nodes])) or np.all(
        (out.phi[nodes] >= 0) == (phi[nodes] >= 0)
    ))
    cells_ok = np.array_equal(cells_before, out.interface_cells(mesh))
    ok = frac >= 0.95 and iters <= 10 and signs_ok and cells_ok
    return ok, f"gradient-norm band fraction {frac:.3f} (>=0.95), iterations {iters} (<=10), interface intact {signs_ok and cells_ok}"


def suite_hilbertian(resolution=64):
    from .problem import build_problem, desk_preset

    problem = build_problem(desk_preset("parallel", resolution=resolution))
    payload = problem.solve(problem.initial_phi(), problem.config.da)
    system, states = payload
    ws = AdjointWorkspace(system, states)
    grads = shape_gradients(system, states, {"J": ws.solve("J")})
    dj = grads["J"]
    ext = HilbertianExtender(problem.mesh, ExtensionSettings(gamma=problem.config.gamma, c1=1e4))
    zeta = ext.extend(dj)
    galerkin_err = abs(ext.inner(zeta, zeta) - dj(zeta)) / max(abs(dj(zeta)), 1e-300)
    mesh = problem.mesh
    pairs = mesh.facets
    _, normal = facet_geometry(mesh.vertices[pairs[:, 0]], mesh.vertices[pairs[:, 1]], mesh.vertices[mesh.facet_opposite])
    zn = np.abs(np.einsum("fk,fk->f", 0.5 * (zeta[pairs[:, 0]] + zeta[pairs[:, 1]]), normal)).max()
    ratio = float(zn / np.abs(zeta).max())
    ok = galerkin_err <= 1e-10 and ratio <= 1e-2
    return ok, f"Galerkin identity rel err {galerkin_err:.2e} (<=1e-10), boundary normal ratio {ratio:.2e} (<=1e-2)"


def default_suites(fast=False):
    if fast:
        return [
            ("poiseuille", lambda: suite_poiseuille((48, 16))),
            ("advection-diffusion", lambda: suite_advection_diffusion(120)),
            ("brinkmann-limit", lambda: suite_brinkmann((48, 16))),
            ("shape-derivative-taylor", lambda: suite_taylor(8)),
            ("reinitialization", lambda: suite_reinit(32)),
            ("hilbertian-extension", lambda: suite_hilbertian(24)),
        ]
    return [
        ("poiseuille", suite_poiseuille),
        ("advection-diffusion", suite_advection_diffusion),
        ("brinkmann-limit", suite_brinkmann),
        ("shape-derivative-taylor", suite_taylor),
        ("reinitialization", suite_reinit),
        ("hilbertian-extension", suite_hilbertian),
    ]
