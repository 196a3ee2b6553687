"""P1 simplicial finite-element core: quadrature, geometry, assembly, solves.

Every geometric quantity is computed from a coordinate array that may be
real *or complex*.  The sensitivity layer differentiates assembled forms by
the complex-step rule, so all branch decisions here (longest edge, normal
orientation, sign of the area) are taken on real parts: a small imaginary
perturbation then stays on the analytic branch and the imaginary part is an
exact directional derivative.

Element kernels may be evaluated concurrently across cells; the scatter-add
into the global matrix is commutative.  Assembled operators and meshes are
immutable after construction and safe to share read-only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyFailure, InvalidArgumentError, SingularSystemError, SolverFailure

# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

# Triangle rules in barycentric coordinates; weights sum to one, so
# integral over a cell = area * sum(w_q * f(x_q)).
_TRI_RULES = {}

_TRI_RULES[1] = (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0]))

_m = 1 / 6
_TRI_RULES[2] = (
    np.array([[2 / 3, _m, _m], [_m, 2 / 3, _m], [_m, _m, 2 / 3]]),
    np.full(3, 1 / 3),
)

_a1, _w1 = 0.445948490915965, 0.223381589678011
_a2, _w2 = 0.091576213509771, 0.109951743655322
_TRI_RULES[4] = (
    np.array(
        [
            [1 - 2 * _a1, _a1, _a1],
            [_a1, 1 - 2 * _a1, _a1],
            [_a1, _a1, 1 - 2 * _a1],
            [1 - 2 * _a2, _a2, _a2],
            [_a2, 1 - 2 * _a2, _a2],
            [_a2, _a2, 1 - 2 * _a2],
        ]
    ),
    np.array([_w1, _w1, _w1, _w2, _w2, _w2]),
)
_TRI_RULES[3] = _TRI_RULES[4]


def triangle_rule(degree: int):
    """Smallest stored rule exact for polynomials of the given degree."""
    if degree < 1:
        degree = 1
    if degree > 4:
        raise InvalidArgumentError(f"no triangle quadrature stored for degree {degree}")
    return _TRI_RULES[degree]


# Gauss rules on [0, 1] for facet (edge) integrals.
_x3 = np.sqrt(3 / 5)
_FACET_RULES = {
    3: (np.array([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)]), np.array([0.5, 0.5])),
    5: (
        np.array([0.5 - 0.5 * _x3, 0.5, 0.5 + 0.5 * _x3]),
        np.array([5 / 18, 8 / 18, 5 / 18]),
    ),
}


def facet_rule(degree: int):
    for deg in (3, 5):
        if degree <= deg:
            return _FACET_RULES[deg]
    raise InvalidArgumentError(f"no facet quadrature stored for degree {degree}")


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


def _rot90(v):
    """Rotate 2-vectors by +90 degrees: (x, y) -> (-y, x)."""
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def _length(v):
    # sqrt of the complex dot product, analytic while Re(v.v) > 0
    return np.sqrt(np.sum(v * v, axis=-1))


@dataclass
class CellGeometry:
    """Per-cell area, P1 basis gradients and element size h (longest edge)."""

    area: np.ndarray  # (..., nc)
    grad: np.ndarray  # (..., nc, 3, 2), grad[a] = grad of barycentric lambda_a
    h: np.ndarray  # (..., nc)


def cell_geometry(coords_loc) -> CellGeometry:
    """Geometry from local vertex coordinates of shape (..., nc, 3, 2).

    Works for real and complex coordinate arrays.  Signed areas must be
    positive (on the real part); callers validate at mesh construction.
    """
    e0 = coords_loc[..., 2, :] - coords_loc[..., 1, :]
    e1 = coords_loc[..., 0, :] - coords_loc[..., 2, :]
    e2 = coords_loc[..., 1, :] - coords_loc[..., 0, :]
    area = 0.5 * (e2[..., 0] * (-e1[..., 1]) - e2[..., 1] * (-e1[..., 0]))
    edges = np.stack([e0, e1, e2], axis=-2)  # (..., nc, 3, 2)
    grad = _rot90(edges) / (2.0 * area[..., None, None])
    lengths = _length(edges)  # (..., nc, 3)
    longest = np.argmax(lengths.real, axis=-1)
    h = np.take_along_axis(lengths, longest[..., None], axis=-1)[..., 0]
    return CellGeometry(area=area, grad=grad, h=h)


def facet_geometry(p0, p1, p_opp):
    """Length and outward unit normal of facets given endpoints and the
    opposite vertex of the owning cell (all shape (..., 2))."""
    t = p1 - p0
    length = _length(t)
    n = _rot90(t) / length[..., None]
    # outward = pointing away from the opposite vertex; decide on real parts
    inward = np.sum(n * (p_opp - p0), axis=-1)
    flip = np.where(inward.real > 0.0, -1.0, 1.0)
    return length, n * flip[..., None]


# ---------------------------------------------------------------------------
# scatter / assembly
# ---------------------------------------------------------------------------


def scatter_matrix(dofmap, local, ndof):
    """Sum local element matrices (nc, nl, nl) into a CSR matrix.

    dofmap has shape (nc, nl); duplicate (row, col) pairs accumulate.
    """
    nc, nl = dofmap.shape
    if not np.all(np.isfinite(local)):
        bad = np.where(~np.all(np.isfinite(local), axis=(1, 2)))[0]
        raise AssemblyFailure(f"non-finite element matrix in cell {bad[0]}", cell=int(bad[0]))
    rows = np.repeat(dofmap, nl, axis=1).ravel()
    cols = np.tile(dofmap, (1, nl)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(ndof, ndof))
    return mat.tocsr()


def scatter_vector(dofmap, local, ndof):
    """Sum local element vectors (nc, nl) into a global vector."""
    if not np.all(np.isfinite(local)):
        bad = np.where(~np.all(np.isfinite(local), axis=1))[0]
        raise AssemblyFailure(f"non-finite element vector in cell {bad[0]}", cell=int(bad[0]))
    out = np.zeros(ndof, dtype=local.dtype)
    np.add.at(out, dofmap.ravel(), local.ravel())
    return out


def vector_dofmap(cells):
    """Interleaved (x0, y0, x1, y1, ...) dof map for a P1 vector space."""
    nc = cells.shape[0]
    dm = np.empty((nc, 6), dtype=cells.dtype)
    dm[:, 0::2] = 2 * cells
    dm[:, 1::2] = 2 * cells + 1
    return dm


def assemble(kernel, mesh, load=None):
    """Assemble the global matrix of a per-cell bilinear kernel.

    `kernel(geom, lam, w)` receives the mesh cell geometry, the P1 basis
    values at the quadrature points of the rule matching `kernel.degree`,
    and the weights; it returns local matrices (nc, nl, nl).  If `load` is
    given it is evaluated the same way for local vectors (nc, nl) and the
    pair (matrix, vector) is returned.
    """
    lam, w = triangle_rule(getattr(kernel, "degree", 4))
    geom = mesh.geometry
    local = kernel(geom, lam, w)
    nl = local.shape[-1]
    dofmap = mesh.cells if nl == 3 else vector_dofmap(mesh.cells)
    ndof = mesh.num_vertices * (nl // 3)
    mat = scatter_matrix(dofmap, local, ndof)
    if load is None:
        return mat
    vec = scatter_vector(dofmap, load(geom, lam, w), ndof)
    return mat, vec


# canned kernels ------------------------------------------------------------


class mass_kernel:
    """Local P1 mass matrices, \\int lambda_a lambda_b."""

    degree = 2

    def __call__(self, geom, lam, w):
        m_ref = np.einsum("q,qa,qb->ab", w, lam, lam)
        return geom.area[:, None, None] * m_ref


class stiffness_kernel:
    """Local P1 stiffness matrices, \\int grad lambda_a . grad lambda_b."""

    degree = 1

    def __call__(self, geom, lam, w):
        return geom.area[:, None, None] * np.einsum("nad,nbd->nab", geom.grad, geom.grad)


def vector_mass_local(geom, lam, w):
    """Local 6x6 mass matrices of the interleaved P1 vector space."""
    m = np.einsum("q,qa,qb->ab", w, lam, lam)
    nc = geom.area.shape[0]
    out = np.zeros((nc, 6, 6), dtype=geom.area.dtype)
    for k in range(2):
        out[:, k::2, k::2] = geom.area[:, None, None] * m
    return out


def vector_stiffness_local(geom):
    """Local 6x6 grad:grad matrices of the interleaved P1 vector space."""
    s = np.einsum("nad,nbd->nab", geom.grad, geom.grad) * geom.area[:, None, None]
    nc = geom.area.shape[0]
    out = np.zeros((nc, 6, 6), dtype=s.dtype)
    for k in range(2):
        out[:, k::2, k::2] = s
    return out


# ---------------------------------------------------------------------------
# Dirichlet conditions
# ---------------------------------------------------------------------------


@dataclass
class DirichletBC:
    """Prescribed values on a set of degrees of freedom."""

    dofs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=int)
        self.values = np.broadcast_to(np.asarray(self.values, dtype=float), self.dofs.shape).copy()
        order = np.argsort(self.dofs, kind="stable")
        d, v = self.dofs[order], self.values[order]
        dup = d[1:] == d[:-1]
        if np.any(dup & (v[1:] != v[:-1])):
            bad = d[1:][dup & (v[1:] != v[:-1])][0]
            raise InvalidArgumentError(f"conflicting Dirichlet values on dof {bad}")
        keep = np.concatenate([[True], ~dup])
        self.dofs, self.values = d[keep], v[keep]


def apply_dirichlet(op, rhs, bc: DirichletBC):
    """Constrain a linear system: identity rows, exact prescribed values,
    and a column lift so the remaining equations are preserved.

    Idempotent: applying the same bc twice returns the same system.
    """
    ndof = op.shape[0]
    if bc.dofs.size and (bc.dofs.min() < 0 or bc.dofs.max() >= ndof):
        raise InvalidArgumentError("Dirichlet dof outside the space")
    g = np.zeros(ndof)
    g[bc.dofs] = bc.values
    mask = np.zeros(ndof, dtype=bool)
    mask[bc.dofs] = True
    # lift known values to the rhs of the free rows, pin constrained rows to g
    b = np.asarray(rhs, dtype=float) - op @ g
    b[mask] = g[mask]
    keep = sp.diags((~mask).astype(float))
    a = keep @ op @ keep + sp.diags(mask.astype(float))
    return a.tocsr(), b


def solve_linear(op, rhs):
    """Sparse direct solve with a residual check.

    Raises SingularSystemError for (numerically) singular factorizations and
    SolverFailure if the residual exceeds 1e-10 relative to the rhs even
    after one step of iterative refinement.
    """
    rhs = np.asarray(rhs, dtype=float)
    if op.shape[0] != op.shape[1] or op.shape[0] != rhs.shape[0]:
        raise InvalidArgumentError("system is not square or rhs size mismatch")
    if not np.all(np.isfinite(rhs)):
        raise InvalidArgumentError("non-finite right-hand side")
    try:
        lu = spla.splu(op.tocsc())
    except RuntimeError as exc:  # SuperLU signals exact singularity this way
        raise SingularSystemError(f"singular factorization: {exc}", pivot_info=str(exc)) from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("factorization produced non-finite solution", pivot_info="nan pivots")
    rnorm = np.linalg.norm(rhs)
    if rnorm == 0.0:
        return x
    res = rhs - op @ x
    if np.linalg.norm(res) > 1e-10 * rnorm:
        x = x + lu.solve(res)  # one refinement step
        res = rhs - op @ x
        if np.linalg.norm(res) > 1e-10 * rnorm:
            raise SolverFailure(
                f"direct solve residual {np.linalg.norm(res) / rnorm:.2e} above 1e-10",
                residual_history=[np.linalg.norm(res) / rnorm],
            )
    return x


class LUOperator:
    """Cached LU factorization reused across many right-hand sides."""

    def __init__(self, op):
        try:
            self._lu = spla.splu(op.tocsc())
        except RuntimeError as exc:
            raise SingularSystemError(f"singular factorization: {exc}", pivot_info=str(exc)) from exc

    def solve(self, rhs):
        x = self._lu.solve(np.asarray(rhs))
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("factorization produced non-finite solution")
        return x


# ---------------------------------------------------------------------------
# boundary integration
# ---------------------------------------------------------------------------


def integrate_boundary(expr, mesh, tag, degree: int = 3):
    """Integrate `expr` over all boundary facets carrying `tag`.

    `expr` may be a constant, a nodal array (P1-interpolated), or a callable
    `expr(points, normals)` / `expr(points)` evaluated at facet quadrature
    points of shape (nfacet, nq, 2).
    """
    facets = mesh.facets_with(tag)
    if facets.size == 0:
        raise InvalidArgumentError(f"unknown or empty boundary tag {tag!r}")
    s, w = facet_rule(degree)
    p0 = mesh.vertices[mesh.facets[facets, 0]]
    p1 = mesh.vertices[mesh.facets[facets, 1]]
    opp = mesh.vertices[mesh.facet_opposite[facets]]
    length, normal = facet_geometry(p0, p1, opp)
    pts = p0[:, None, :] * (1 - s)[None, :, None] + p1[:, None, :] * s[None, :, None]
    if callable(expr):
        try:
            vals = expr(pts, normal[:, None, :])
        except TypeError:
            vals = expr(pts)
        vals = np.broadcast_to(np.asarray(vals), pts.shape[:2])
    elif np.ndim(expr) == 0:
        vals = np.broadcast_to(float(expr), pts.shape[:2])
    else:
        nodal = np.asarray(expr)
        v0 = nodal[mesh.facets[facets, 0]]
        v1 = nodal[mesh.facets[facets, 1]]
        vals = v0[:, None] * (1 - s)[None, :] + v1[:, None] * s[None, :]
    return float(np.sum(length[:, None] * w[None, :] * vals))
