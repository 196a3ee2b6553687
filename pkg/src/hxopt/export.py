"""Field export (legacy ASCII VTK), history CSV and config file parsing."""

from __future__ import annotations

import dataclasses
import io
import os

import numpy as np

from .errors import ConfigError, HxoptError
from .levelset import indicator_from_levelset
from .problem import ProblemConfig

CSV_HEADER = "iter,J,G1,G2,merit,t_hat,theta_max,tau,reinit,Da"


def _fmt(x):
    return format(float(x), ".9g")


def export_fields(states, phi, mesh, path, chi_h=None):
    """Write one snapshot as a legacy ASCII unstructured-grid VTK file.

    Point data, in this fixed order: phi, chi_H, u_C, u_H, p_C, p_H, T and
    the combined u.  Output is byte-deterministic for identical inputs.
    """
    phi = np.asarray(phi, dtype=float)
    if chi_h is None:
        chi_h, _ = indicator_from_levelset(phi)
    nv = mesh.num_vertices
    buf = io.StringIO()
    buf.write("# vtk DataFile Version 3.0\n")
    buf.write("hxopt snapshot\n")
    buf.write("ASCII\n")
    buf.write("DATASET UNSTRUCTURED_GRID\n")
    buf.write(f"POINTS {nv} double\n")
    for vx, vy in mesh.vertices:
        buf.write(f"{_fmt(vx)} {_fmt(vy)} 0\n")
    nc = mesh.num_cells
    buf.write(f"CELLS {nc} {4 * nc}\n")
    for a, b, c in mesh.cells:
        buf.write(f"3 {a} {b} {c}\n")
    buf.write(f"CELL_TYPES {nc}\n")
    buf.write("5\n" * nc)
    buf.write(f"POINT_DATA {nv}\n")

    def scalars(name, values):
        buf.write(f"SCALARS {name} double\nLOOKUP_TABLE default\n")
        for v in values:
            buf.write(_fmt(v) + "\n")

    def vectors(name, values):
        buf.write(f"VECTORS {name} double\n")
        for vx, vy in values:
            buf.write(f"{_fmt(vx)} {_fmt(vy)} 0\n")

    scalars("phi", phi)
    scalars("chi_H", chi_h)
    vectors("u_C", states.cold.velocity)
    vectors("u_H", states.hot.velocity)
    scalars("p_C", states.cold.pressure)
    scalars("p_H", states.hot.pressure)
    scalars("T", states.thermal.temperature)
    vectors("u", states.cold.velocity + states.hot.velocity)

    try:
        with open(path, "w") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise HxoptError(f"cannot write snapshot {path}: {exc}") from exc
    return path


class HistoryWriter:
    """Crash-safe CSV appender: header plus exactly one row per iteration,
    flushed as soon as it is written."""

    def __init__(self, path):
        self.path = path
        try:
            self._fh = open(path, "w")
        except OSError as exc:
            raise HxoptError(f"cannot open history file {path}: {exc}") from exc
        self._fh.write(CSV_HEADER + "\n")
        self._fh.flush()

    def _write_row(self, iteration, j, g1, g2, m, t_hat, theta_max, tau, reinit, da):
        row = [
            str(int(iteration)),
            _fmt(j),
            _fmt(g1),
            _fmt(g2),
            _fmt(m),
            _fmt(t_hat),
            _fmt(theta_max),
            _fmt(tau),
            str(int(bool(reinit))),
            _fmt(da),
        ]
        self._fh.write(",".join(row) + "\n")
        self._fh.flush()

    def append(self, record):
        self._write_row(
            record.iteration,
            record.j,
            record.g1,
            record.g2,
            record.merit,
            record.t_hat,
            record.theta_max,
            record.tau,
            record.reinit,
            record.da,
        )

    def close(self):
        self._fh.close()


# ---------------------------------------------------------------------------
# flat key = value configuration files
# ---------------------------------------------------------------------------

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ProblemConfig)}


def _coerce(name, raw, line):
    kind = _FIELD_TYPES[name]
    try:
        if kind == "str":
            return raw
        if kind == "int":
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse value {raw!r} for key {name!r}", line=line) from exc


def parse_config_text(text) -> ProblemConfig:
    values = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}", line=lineno)
        if not raw:
            raise ConfigError(f"empty value for key {key!r}", line=lineno)
        values[key] = _coerce(key, raw, lineno)
    try:
        return ProblemConfig(**values)
    except HxoptError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ProblemConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        return parse_config_text(fh.read())
