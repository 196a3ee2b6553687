"""Structured crossed-diagonal triangle meshes with tagged boundary facets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .fem import CellGeometry, cell_geometry


@dataclass
class Mesh:
    """Simplicial mesh: vertices, cells and tagged boundary facets.

    Each boundary facet belongs to exactly one cell and carries exactly one
    tag.  Instances are treated as immutable after construction.
    """

    vertices: np.ndarray  # (nv, 2)
    cells: np.ndarray  # (nc, 3), positively oriented
    facets: np.ndarray  # (nf, 2) vertex pairs on the boundary
    facet_cell: np.ndarray  # (nf,) owning cell index
    facet_tag: np.ndarray  # (nf,) of small ints
    tag_names: dict = field(default_factory=dict)  # name -> int code
    _geom: CellGeometry | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.cells = np.asarray(self.cells, dtype=np.int64)
        self.facets = np.asarray(self.facets, dtype=np.int64)
        self.facet_cell = np.asarray(self.facet_cell, dtype=np.int64)
        self.facet_tag = np.asarray(self.facet_tag, dtype=np.int64)
        if np.any(self.geometry.area <= 0.0):
            bad = int(np.argmin(self.geometry.area))
            raise InvalidArgumentError(f"cell {bad} has non-positive area")

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def geometry(self) -> CellGeometry:
        if self._geom is None:
            object.__setattr__(self, "_geom", cell_geometry(self.vertices[self.cells]))
        return self._geom

    @property
    def h(self) -> np.ndarray:
        """Per-cell element size (longest edge)."""
        return self.geometry.h

    @property
    def facet_opposite(self) -> np.ndarray:
        """Vertex of the owning cell opposite to each boundary facet."""
        tri = self.cells[self.facet_cell]  # (nf, 3)
        on_facet = (tri[:, :, None] == self.facets[:, None, :]).any(axis=2)
        return tri[np.arange(self.facets.shape[0]), np.argmin(on_facet, axis=1)]

    def tag_id(self, name: str) -> int:
        if name not in self.tag_names:
            raise InvalidArgumentError(f"unknown boundary tag {name!r}")
        return self.tag_names[name]

    def facets_with(self, tag: str) -> np.ndarray:
        """Indices of boundary facets carrying the tag."""
        return np.where(self.facet_tag == self.tag_id(tag))[0]

    def nodes_with(self, tag: str) -> np.ndarray:
        """Unique vertex indices touched by facets carrying the tag."""
        return np.unique(self.facets[self.facets_with(tag)])

    def facet_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.facets[:, 0]] + self.vertices[self.facets[:, 1]])

    def retag(self, name: str, facet_indices) -> "Mesh":
        """New mesh with the given facets re-tagged under `name`."""
        tags = self.facet_tag.copy()
        names = dict(self.tag_names)
        code = names.setdefault(name, max(names.values(), default=-1) + 1)
        tags[np.asarray(facet_indices, dtype=int)] = code
        return Mesh(self.vertices, self.cells, self.facets, self.facet_cell, tags, names)

    def cell_neighbors_of_nodes(self):
        """Boolean (nv,) helper data: list of cells per node as CSR-style arrays."""
        order = np.argsort(self.cells.ravel(), kind="stable")
        nodes = self.cells.ravel()[order]
        cells = np.repeat(np.arange(self.num_cells), 3)[order]
        counts = np.bincount(nodes, minlength=self.num_vertices)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        return offsets, cells


def build_structured_mesh(resolution, extent) -> Mesh:
    """Crossed-diagonal mesh of a box: every grid quad is split into four
    triangles through its center point.

    `resolution` is cells per axis (int or pair), `extent` the axis lengths.
    Boundary facets are tagged "left", "right", "bottom", "top".
    """
    if np.isscalar(resolution):
        resolution = (int(resolution), int(resolution))
    if np.isscalar(extent):
        extent = (float(extent), float(extent))
    nx, ny = int(resolution[0]), int(resolution[1])
    lx, ly = float(extent[0]), float(extent[1])
    if nx < 1 or ny < 1:
        raise InvalidArgumentError("resolution must be at least 1 cell per axis")
    if lx <= 0 or ly <= 0:
        raise InvalidArgumentError("extent must be positive")

    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    grid = np.column_stack([gx.ravel(), gy.ravel()])  # index j*(nx+1)+i
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    ccx, ccy = np.meshgrid(cx, cy, indexing="xy")
    centers = np.column_stack([ccx.ravel(), ccy.ravel()])  # index j*nx+i
    vertices = np.vstack([grid, centers])
    n_grid = grid.shape[0]

    def g(i, j):
        return j * (nx + 1) + i

    def c(i, j):
        return n_grid + j * nx + i

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    ii, jj = ii.ravel(), jj.ravel()
    ll, lr, ur, ul, ce = g(ii, jj), g(ii + 1, jj), g(ii + 1, jj + 1), g(ii, jj + 1), c(ii, jj)
    # per quad: bottom, right, top, left triangle (all counter-clockwise)
    cells = np.empty((nx * ny * 4, 3), dtype=np.int64)
    cells[0::4] = np.column_stack([ll, lr, ce])
    cells[1::4] = np.column_stack([lr, ur, ce])
    cells[2::4] = np.column_stack([ur, ul, ce])
    cells[3::4] = np.column_stack([ul, ll, ce])

    def quad(i, j):
        return j * nx + i

    fac, own, tag = [], [], []
    i = np.arange(nx)
    j = np.arange(ny)
    fac.append(np.column_stack([g(i, 0), g(i + 1, 0)]))
    own.append(4 * quad(i, 0) + 0)
    tag.append(np.full(nx, 2))
    fac.append(np.column_stack([g(nx, j), g(nx, j + 1)]))
    own.append(4 * quad(nx - 1, j) + 1)
    tag.append(np.full(ny, 1))
    fac.append(np.column_stack([g(i + 1, ny), g(i, ny)]))
    own.append(4 * quad(i, ny - 1) + 2)
    tag.append(np.full(nx, 3))
    fac.append(np.column_stack([g(0, j + 1), g(0, j)]))
    own.append(4 * quad(0, j) + 3)
    tag.append(np.full(ny, 0))

    return Mesh(
        vertices=vertices,
        cells=cells,
        facets=np.vstack(fac),
        facet_cell=np.concatenate(own),
        facet_tag=np.concatenate(tag),
        tag_names={"left": 0, "right": 1, "bottom": 2, "top": 3},
    )
