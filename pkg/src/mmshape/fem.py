"""P1 Lagrange finite elements on a single triangle mesh.

Assembly helpers return COO triplets in mesh-local vertex numbering so the
multimesh layer can shift them by a block offset before summing.
"""
from dataclasses import dataclass, field
import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError
from .quadrature import gauss_segment, map_triangle_rule


@dataclass
class Triplets:
    rows: list = field(default_factory=list)
    cols: list = field(default_factory=list)
    vals: list = field(default_factory=list)

    def add(self, rows, cols, vals, offset=0):
        self.rows.append(np.asarray(rows, dtype=np.int64).ravel() + offset)
        self.cols.append(np.asarray(cols, dtype=np.int64).ravel() + offset)
        self.vals.append(np.asarray(vals, dtype=float).ravel())

    def extend(self, other, offset=0, scale=1.0):
        for r, c, v in zip(other.rows, other.cols, other.vals):
            self.rows.append(r + offset)
            self.cols.append(c + offset)
            self.vals.append(scale * v)

    def tocsr(self, n):
        if not self.rows:
            return sp.csr_matrix((n, n))
        r = np.concatenate(self.rows)
        c = np.concatenate(self.cols)
        v = np.concatenate(self.vals)
        return sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()


@dataclass
class SparseSystem:
    """Matrix, right-hand side and the Dirichlet constraints already applied."""

    A: sp.csr_matrix
    b: np.ndarray
    constraints: dict = field(default_factory=dict)


def _cell_values(mesh, coeff):
    """Per-cell coefficient from a scalar, a region dict or a per-cell array."""
    if isinstance(coeff, dict):
        return np.array([coeff[r] for r in mesh.cell_region.tolist()], dtype=float)
    arr = np.asarray(coeff, dtype=float)
    if arr.ndim == 0:
        return np.full(mesh.num_cells, float(arr))
    return arr


def _local_pairs(cells):
    rows = np.repeat(cells, 3, axis=1)
    cols = np.tile(cells, (1, 3))
    return rows, cols


def assemble_laplace(mesh, coeff=1.0, cell_area=None, cells=None):
    """Stiffness entries coeff_K |K| grad(phi_a) . grad(phi_b).

    ``cell_area`` overrides |K| (visible area of cut cells); ``cells``
    restricts assembly to a subset.
    """
    lam = _cell_values(mesh, coeff)
    if np.any(lam <= 0):
        raise ValueError("conductivity must be positive")
    idx = np.arange(mesh.num_cells) if cells is None else np.asarray(cells)
    area = (mesh.areas if cell_area is None else np.asarray(cell_area, dtype=float))[idx]
    G = mesh.gradients[idx]
    K = np.einsum("kid,kjd->kij", G, G) * (lam[idx] * area)[:, None, None]
    rows, cols = _local_pairs(mesh.cells[idx])
    out = Triplets()
    out.add(rows, cols, K)
    return out


def element_mass(area):
    """Exact P1 mass matrices: |K|/6 on the diagonal, |K|/12 off it."""
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return np.asarray(area)[:, None, None] * base[None]


def assemble_mass(mesh, coeff=1.0, cells=None, hidden=None):
    """Mass entries coeff_K * int phi_a phi_b, optionally minus hidden-part integrals.

    ``hidden`` maps cell -> (points, weights) of the part to subtract.
    """
    c = _cell_values(mesh, coeff)
    idx = np.arange(mesh.num_cells) if cells is None else np.asarray(cells)
    out = Triplets()
    if not np.any(c[idx]):
        return out
    M = element_mass(mesh.areas[idx]) * c[idx][:, None, None]
    rows, cols = _local_pairs(mesh.cells[idx])
    out.add(rows, cols, M)
    if hidden:
        q = hidden_points(mesh, hidden)
        if q is not None:
            cell, bary, w = q
            loc = -np.einsum("q,qi,qj->qij", w * c[cell], bary, bary)
            rows, cols = _local_pairs(mesh.cells[cell])
            out.add(rows, cols, loc)
    return out


def hidden_points(mesh, hidden):
    """Flatten a cell -> (points, weights) dict into (cell, barycentric, weight)."""
    from .cutgeom import barycentric

    cells, pts, ws = [], [], []
    for k, (p, w) in hidden.items():
        if len(w) == 0:
            continue
        cells.append(np.full(len(w), k))
        pts.append(p)
        ws.append(w)
    if not cells:
        return None
    cell = np.concatenate(cells)
    pts = np.concatenate(pts)
    w = np.concatenate(ws)
    bary = barycentric(mesh.cell_coords(cell), pts)
    return cell, bary, w


def cell_quadrature(mesh, degree=4, cells=None, hidden=None):
    """Quadrature over (parts of) cells as flat arrays.

    Returns (cell, points, barycentric, weights).  Hidden parts enter with
    negative weights (subtraction rule), so any integrand that is a single
    smooth function on each cell integrates over the visible part.
    """
    idx = np.arange(mesh.num_cells) if cells is None else np.asarray(cells)
    pts, w, ref = map_triangle_rule(mesh.cell_coords(idx), degree)
    nq = len(ref)
    bary = np.column_stack([1.0 - ref[:, 0] - ref[:, 1], ref[:, 0], ref[:, 1]])
    cell = np.repeat(idx, nq)
    P = pts.reshape(-1, 2)
    B = np.tile(bary, (len(idx), 1))
    W = w.ravel()
    if hidden:
        q = hidden_points(mesh, hidden)
        if q is not None:
            hc, hb, hw = q
            hp = np.einsum("qi,qid->qd", hb, mesh.cell_coords(hc))
            cell = np.concatenate([cell, hc])
            P = np.concatenate([P, hp])
            B = np.concatenate([B, hb])
            W = np.concatenate([W, -hw])
    return cell, P, B, W


def assemble_load(mesh, f, degree=4, cells=None, hidden=None, coeff=None):
    """Load vector int f phi_a over the selected (visible) cells.

    ``f`` is either a callable f(x, y) or a per-region dict / per-cell array
    of constants.
    """
    cell, P, B, W = cell_quadrature(mesh, degree, cells, hidden)
    if callable(f):
        fv = np.asarray(f(P[:, 0], P[:, 1]), dtype=float) * np.ones(len(W))
    else:
        fv = _cell_values(mesh, f)[cell]
    if coeff is not None:
        fv = fv * _cell_values(mesh, coeff)[cell]
    b = np.zeros(mesh.num_vertices)
    np.add.at(b, mesh.cells[cell], (W * fv)[:, None] * B)
    return b


def assemble_robin(mesh, marker, alpha=1.0, t_ex=0.0):
    """Boundary mass alpha * int T v dS and rhs alpha * int T_ex v dS on ``marker`` facets."""
    facets = mesh.facets[mesh.facet_marker == marker]
    out = Triplets()
    b = np.zeros(mesh.num_vertices)
    if len(facets) == 0:
        return out, b
    L = np.linalg.norm(mesh.vertices[facets[:, 1]] - mesh.vertices[facets[:, 0]], axis=1)
    loc = alpha * L[:, None, None] * (np.ones((2, 2)) + np.eye(2))[None] / 6.0
    rows = np.repeat(facets, 2, axis=1)
    cols = np.tile(facets, (1, 2))
    out.add(rows, cols, loc)
    if callable(t_ex):
        t, w = gauss_segment(3)
        a = mesh.vertices[facets[:, 0]]
        d = mesh.vertices[facets[:, 1]] - a
        for ti, wi in zip(t, w):
            x = a + ti * d
            g = np.asarray(t_ex(x[:, 0], x[:, 1]), dtype=float) * np.ones(len(facets))
            np.add.at(b, facets[:, 0], alpha * wi * L * g * (1 - ti))
            np.add.at(b, facets[:, 1], alpha * wi * L * g * ti)
    elif t_ex != 0.0:
        np.add.at(b, facets.ravel(), np.repeat(alpha * t_ex * L / 2.0, 2))
    return out, b


def boundary_flux(mesh, residual, marker):
    """Nodal normal flux on ``marker`` facets from a discrete residual.

    For a residual r_i = a(u, phi_i) - l(phi_i) assembled over the cells on
    one side of the marker, r_i equals int_G flux phi_i dS with the outward
    normal of that side, so the flux follows from one boundary-mass solve.
    This is markedly more accurate than one-sided cell gradients.  Returns a
    vertex array that is zero away from the marker.
    """
    n = mesh.num_vertices
    trip, _ = assemble_robin(mesh, marker)
    vv = mesh.marker_vertices(marker)
    q = np.zeros(n)
    if len(vv) == 0:
        return q
    M = trip.tocsr(n)[vv][:, vv].tocsc()
    q[vv] = spla.spsolve(M, np.asarray(residual, dtype=float)[vv])
    return q


def apply_dirichlet(A, b, dofs, values):
    """Symmetric elimination: fold constrained columns into b, identity rows."""
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    n = A.shape[0]
    if len(dofs) == 0:
        return SparseSystem(A.tocsr(), np.array(b, dtype=float), {})
    g = np.zeros(n)
    g[dofs] = values
    b = np.array(b, dtype=float) - A @ g
    mask = np.ones(n)
    mask[dofs] = 0.0
    D = sp.diags(mask)
    A = (D @ A @ D).tocsr()
    A = A + sp.diags(1.0 - mask)
    b[dofs] = values
    return SparseSystem(A.tocsr(), b, dict(zip(dofs.tolist(), values.tolist())))


def dirichlet_dofs(mesh, marker, g, offset=0):
    """Vertex dofs on ``marker`` facets and the values of g there."""
    verts = mesh.marker_vertices(marker)
    x = mesh.vertices[verts]
    vals = np.asarray(g(x[:, 0], x[:, 1]), dtype=float) * np.ones(len(verts)) if callable(g) else np.full(len(verts), float(g))
    return verts + offset, vals


def pcg(A, b, rel_tol=1e-10, maxiter=None):
    """Jacobi-preconditioned conjugate gradients with a negative-curvature check."""
    n = A.shape[0]
    if maxiter is None:
        maxiter = max(50, int(20 * np.sqrt(n)))
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix has a nonpositive diagonal entry")
    Minv = 1.0 / diag
    x = np.zeros(n)
    r = np.array(b, dtype=float)
    bnorm = np.linalg.norm(r)
    if bnorm == 0.0:
        return x
    z = Minv * r
    p = z.copy()
    rz = r @ z
    for _ in range(maxiter):
        Ap = A @ p
        curv = p @ Ap
        if curv <= 0:
            raise SolverError("negative curvature encountered: matrix is not positive definite",
                              residual=np.linalg.norm(r) / bnorm)
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= rel_tol * bnorm:
            return x
        z = Minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError("conjugate gradients did not converge", residual=np.linalg.norm(r) / bnorm)


def backward_error(A, u, b):
    """Normwise backward error ||Au - b|| / (||A|| ||u|| + ||b||) in the infinity norm."""
    r = np.abs(A @ u - b).max() if len(b) else 0.0
    scale = spla.norm(A, np.inf) * np.abs(u).max() + np.abs(b).max() if len(b) else 1.0
    return float(r / scale) if scale > 0 else float(r)


def solve_spd(system, rel_tol=1e-10, method="direct"):
    """Solve a symmetric positive definite system.

    ``method="cg"`` runs preconditioned CG to ||Au - b|| <= rel_tol ||b|| (and
    detects indefiniteness); ``"direct"`` uses a sparse LU factorization and
    requires a normwise backward error below ``rel_tol``, which is what a
    stable direct solver can promise on badly scaled systems.
    """
    A, b = system.A, system.b
    if method == "cg":
        return pcg(A, b, rel_tol)
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            u = spla.spsolve(A.tocsc(), b)
    except (RuntimeError, spla.MatrixRankWarning) as exc:
        raise SolverError(f"sparse factorization failed: {exc}") from None
    res = backward_error(A, u, b)
    if not np.all(np.isfinite(u)) or res > rel_tol:
        # one step of iterative refinement before giving up
        u = u + spla.spsolve(A.tocsc(), b - A @ u)
        res = backward_error(A, u, b)
        if not np.all(np.isfinite(u)) or res > rel_tol:
            raise SolverError("direct solve missed the residual target", residual=res)
    return u


# ---------------------------------------------------------------- evaluation


def eval_field(mesh, u, point):
    """Barycentric interpolation of the P1 field ``u`` at ``point`` (None outside)."""
    from .cutgeom import barycentric, point_locate

    k = point_locate(mesh, point)
    if k is None:
        return None
    lam = barycentric(mesh.cell_coords([k]), np.asarray(point, dtype=float)[None])[0]
    return float(lam @ u[mesh.cells[k]])


def cell_gradient(mesh, u, cell=None):
    """Constant gradient of ``u`` on one cell, or on all cells (m, 2) when cell is None."""
    if cell is None:
        return np.einsum("kid,ki->kd", mesh.gradients, u[mesh.cells])
    return mesh.gradients[cell].T @ u[mesh.cells[cell]]


def l2_error(mesh, u, exact, degree=4, cells=None, hidden=None):
    """sqrt(int (u_h - u)^2) over the selected cells minus hidden parts."""
    if degree < 2:
        raise ValueError("degree must be at least 2")
    cell, P, B, W = cell_quadrature(mesh, degree, cells, hidden)
    uh = np.einsum("qi,qi->q", B, u[mesh.cells[cell]])
    ue = np.asarray(exact(P[:, 0], P[:, 1]), dtype=float) * np.ones(len(W))
    return float(np.sqrt(max(np.sum(W * (uh - ue) ** 2), 0.0)))


def interpolate(mesh, func):
    return np.asarray(func(mesh.vertices[:, 0], mesh.vertices[:, 1]), dtype=float) * np.ones(mesh.num_vertices)


def solve_poisson(mesh, f, g, markers=(10,), coeff=1.0, degree=4):
    """Single-mesh Dirichlet Poisson solve; reference path for tests and the degenerate stack."""
    n = mesh.num_vertices
    A = assemble_laplace(mesh, coeff).tocsr(n)
    b = assemble_load(mesh, f, degree)
    dofs, vals = [], []
    for m in markers:
        d, v = dirichlet_dofs(mesh, m, g)
        dofs.append(d)
        vals.append(v)
    dofs = np.concatenate(dofs)
    vals = np.concatenate(vals)
    dofs, first = np.unique(dofs, return_index=True)
    return solve_spd(apply_dirichlet(A, b, dofs, vals[first]))
