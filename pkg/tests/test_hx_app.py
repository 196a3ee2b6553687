"""Problem assembly, configuration mapping, functional wrappers, export."""

import os
import subprocess
import sys

import numpy as np
import pytest

from hxopt.errors import ConfigError, InvalidArgumentError
from hxopt.export import CSV_HEADER, HistoryWriter, export_fields, load_config, parse_config_text
from hxopt.mesh import build_structured_mesh
from hxopt.optimizer import IterationRecord
from hxopt.problem import (
    PORT_ROLE_MAPS,
    ProblemConfig,
    build_problem,
    cost_functional,
    desk_preset,
    initial_levelset,
    pressure_drop,
)
from hxopt.thermal import ThermalState
from hxopt.flow import FlowState


def test_port_role_maps_match_reference_exactly():
    assert PORT_ROLE_MAPS == {
        "parallel": {"cold_in": "g1", "hot_in": "g2", "cold_out": "g4", "hot_out": "g3"},
        "counter": {"cold_in": "g4", "hot_in": "g2", "cold_out": "g1", "hot_out": "g3"},
        "u-flow": {"cold_in": "g3", "hot_in": "g2", "cold_out": "g4", "hot_out": "g1"},
    }


@pytest.mark.parametrize("kind", ["parallel", "counter", "u-flow"])
def test_port_roles_are_permutations(kind):
    roles = PORT_ROLE_MAPS[kind]
    assert sorted(roles.values()) == ["g1", "g2", "g3", "g4"]


def test_unknown_kind_rejected():
    with pytest.raises(InvalidArgumentError):
        ProblemConfig(kind="crossflow")


def test_overlapping_ports_rejected():
    with pytest.raises(InvalidArgumentError):
        ProblemConfig(port_width=0.6)


def test_build_problem_tags_and_buffers():
    prob = build_problem(desk_preset("parallel", resolution=32))
    mesh = prob.mesh
    for tag in ("g1", "g2", "g3", "g4"):
        facets = mesh.facets_with(tag)
        assert facets.size > 0
        mids = mesh.facet_midpoints()[facets]
        edge = "left" if tag in ("g1", "g2") else "right"
        x_expect = 0.0 if edge == "left" else 1.0
        np.testing.assert_allclose(mids[:, 0], x_expect, atol=1e-12)
    assert not np.any(prob.buffer_cold & prob.buffer_hot)
    assert np.array_equal(prob.fixed_nodes, prob.buffer_cold | prob.buffer_hot)


def test_initial_levelset_expression():
    cfg = desk_preset("parallel", resolution=16)
    pts = np.array([[0.1, 0.3], [0.7, 0.2], [0.5, 0.5]])
    vals = initial_levelset(cfg, pts)
    expect = np.sin(4 * np.pi * pts[:, 1]) * np.cos(4 * np.pi * pts[:, 0]) - 0.2
    np.testing.assert_allclose(vals, expect, atol=1e-14)


def test_chi_fields_buffer_override():
    prob = build_problem(desk_preset("parallel", resolution=16))
    phi = np.ones(prob.mesh.num_vertices)  # everything hot
    chi_h, chi_c = prob.chi_fields(phi)
    assert np.all(chi_h[prob.buffer_cold] == 0.0)
    assert np.all(chi_c[prob.buffer_cold] == 1.0)
    assert np.all(chi_h[prob.buffer_hot] == 1.0)
    np.testing.assert_allclose(chi_h + chi_c, 1.0)


# --- functional wrappers ------------------------------------------------------


def _edge_tagged_mesh():
    mesh = build_structured_mesh(8, (1.0, 1.0))
    return mesh


def test_cost_functional_constant_fields():
    mesh = _edge_tagged_mesh()
    nv = mesh.num_vertices
    thermal = ThermalState(temperature=np.ones(nv))
    vel = np.zeros((nv, 2))
    vel[:, 0] = 1.0  # u.n = 1 on the right edge
    cold = FlowState(velocity=vel, pressure=np.zeros(nv))
    assert cost_functional(thermal, cold, mesh, "right") == pytest.approx(1.0)
    thermal0 = ThermalState(temperature=np.zeros(nv))
    assert cost_functional(thermal0, cold, mesh, "right") == 0.0


def test_cost_functional_quadratic_profile():
    mesh = _edge_tagged_mesh()
    nv = mesh.num_vertices
    y = mesh.vertices[:, 1]
    thermal = ThermalState(temperature=y.copy())
    vel = np.zeros((nv, 2))
    vel[:, 0] = y
    cold = FlowState(velocity=vel, pressure=np.zeros(nv))
    assert cost_functional(thermal, cold, mesh, "right") == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_pressure_drop_constants():
    mesh = _edge_tagged_mesh()
    p = np.full(mesh.num_vertices, 5.0)
    p[mesh.vertices[:, 0] > 0.99] = 2.0
    assert pressure_drop(p, mesh, "left", "right") == pytest.approx(3.0)
    assert pressure_drop(np.full(mesh.num_vertices, 3.3), mesh, "left", "right") == pytest.approx(0.0, abs=1e-12)


def test_pressure_drop_unknown_tag():
    mesh = _edge_tagged_mesh()
    with pytest.raises(InvalidArgumentError):
        pressure_drop(np.zeros(mesh.num_vertices), mesh, "left", "bogus")


# --- export -------------------------------------------------------------------


def _tiny_states(mesh):
    nv = mesh.num_vertices
    rng = np.random.default_rng(0)

    class States:
        cold = FlowState(velocity=rng.standard_normal((nv, 2)), pressure=rng.standard_normal(nv))
        hot = FlowState(velocity=rng.standard_normal((nv, 2)), pressure=rng.standard_normal(nv))
        thermal = ThermalState(temperature=rng.random(nv))

    return States()


def test_vtk_export_roundtrip(tmp_path):
    mesh = build_structured_mesh(4, (1.0, 1.0))
    states = _tiny_states(mesh)
    phi = mesh.vertices[:, 0] - 0.5
    path = export_fields(states, phi, mesh, tmp_path / "snap.vtk")
    text = open(path).read()
    assert text.startswith("# vtk DataFile Version 3.0\n")
    lines = text.splitlines()
    points_line = next(l for l in lines if l.startswith("POINTS"))
    assert int(points_line.split()[1]) == mesh.num_vertices
    # field blocks appear in the fixed order
    names = [l.split()[1] for l in lines if l.startswith(("SCALARS", "VECTORS"))]
    assert names == ["phi", "chi_H", "u_C", "u_H", "p_C", "p_H", "T", "u"]
    chi_idx = lines.index("SCALARS chi_H double")
    chi_vals = {float(v) for v in lines[chi_idx + 2 : chi_idx + 2 + mesh.num_vertices]}
    assert chi_vals <= {0.0, 1.0}


def test_vtk_export_deterministic(tmp_path):
    mesh = build_structured_mesh(3, (1.0, 1.0))
    states = _tiny_states(mesh)
    phi = mesh.vertices[:, 1] - 0.4
    p1 = export_fields(states, phi, mesh, tmp_path / "a.vtk")
    p2 = export_fields(states, phi, mesh, tmp_path / "b.vtk")
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_history_writer_columns_and_rows(tmp_path):
    path = tmp_path / "history.csv"
    writer = HistoryWriter(path)
    writer.append(IterationRecord(1, 0.2, 2.0, 2.0, -0.2, 0.04, 0.5, 0.02, False, 1e-5))
    writer.append(IterationRecord(2, 0.3, 1.9, 1.8, -0.3, 0.02, 0.4, 0.0, True, 1e-6))
    writer.close()
    lines = open(path).read().strip().splitlines()
    assert lines[0] == CSV_HEADER == "iter,J,G1,G2,merit,t_hat,theta_max,tau,reinit,Da"
    assert len(lines) == 3  # header + one row per iteration
    first = lines[1].split(",")
    assert first[0] == "1" and float(first[1]) == 0.2
    assert lines[2].split(",")[8] == "1"  # reinit flag


# --- config files --------------------------------------------------------------


def test_parse_config_roundtrip():
    text = """
    # comment line
    kind = counter
    resolution = 24
    re = 12.5
    p_drop = 1.5   # trailing comment
    maxiter = 7
    """
    cfg = parse_config_text(text)
    assert cfg.kind == "counter"
    assert cfg.resolution == 24
    assert cfg.re == pytest.approx(12.5)
    assert cfg.p_drop == pytest.approx(1.5)
    assert cfg.maxiter == 7


def test_parse_config_unknown_key_line_number():
    with pytest.raises(ConfigError) as err:
        parse_config_text("kind = parallel\nwhatever = 3\n")
    assert err.value.line == 2


def test_parse_config_bad_value():
    with pytest.raises(ConfigError) as err:
        parse_config_text("resolution = twelve\n")
    assert err.value.line == 1


def test_parse_config_missing_equals():
    with pytest.raises(ConfigError):
        parse_config_text("resolution 12\n")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.txt")


# --- CLI ------------------------------------------------------------------------


def _write_tiny_config(path, maxiter=1):
    path.write_text(
        "kind = parallel\n"
        "resolution = 16\n"
        "pe = 200\n"
        f"maxiter = {maxiter}\n"
        "t_final = 0.03\n"
        "snapshot_every = 1\n"
    )


def test_cli_run_single_iteration(tmp_path):
    cfg_path = tmp_path / "cfg.txt"
    _write_tiny_config(cfg_path)
    out_dir = tmp_path / "out"
    res = subprocess.run(
        [sys.executable, "-m", "hxopt.cli", "run", str(cfg_path), "--output-dir", str(out_dir), "--max-iters", "1"],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stderr
    csv_lines = open(out_dir / "history.csv").read().strip().splitlines()
    assert csv_lines[0] == CSV_HEADER
    assert len(csv_lines) == 2  # header plus exactly one iteration row
    vtks = [p for p in os.listdir(out_dir) if p.endswith(".vtk")]
    assert len(vtks) >= 1


def test_cli_solve(tmp_path):
    cfg_path = tmp_path / "cfg.txt"
    _write_tiny_config(cfg_path)
    out_dir = tmp_path / "out"
    res = subprocess.run(
        [sys.executable, "-m", "hxopt.cli", "solve", str(cfg_path), "--output-dir", str(out_dir)],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stderr
    assert "J=" in res.stdout
    assert (out_dir / "solve.vtk").exists()


def test_cli_missing_config_exits_2(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "hxopt.cli", "run", str(tmp_path / "absent.txt")],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 2


def test_cli_malformed_config_exits_2(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("kind = parallel\nresolution = -3\n")
    res = subprocess.run(
        [sys.executable, "-m", "hxopt.cli", "run", str(bad)],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 2
    assert "line" in res.stderr or "error" in res.stderr
