"""Design spaces, Riesz representers of the shape gradient and design updates.

All representers return descent directions: the negation of the gradient
happens here, densities keep the raw integrand.
"""
from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .errors import ConfigError, InvalidStepError, SolverError
from .mesh import GAMMA, RigidPose, mesh_quality  # noqa: F401  (re-export)
from .mmassembly import rebuild
from .quadrature import map_triangle_rule
from .shape import directional_derivative, normal_integral, rotation_field


# ---------------------------------------------------------------- design spaces


@dataclass(frozen=True)
class H1:
    alpha: float = 1e-3


@dataclass(frozen=True)
class EikonalAdvect:
    alpha0: float = 1e-3
    alpha1: float = 25.0


@dataclass(frozen=True)
class Rotation:
    """Rigid rotation of submesh ``index`` about ``center`` (world coordinates at pose 0)."""

    index: int = 0
    center: tuple = (0.0, 0.0)
    alpha: float = 1e-3

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")


@dataclass(frozen=True)
class Translation:
    """Rigid translation of submesh ``index``; centers may be bounded by ``r_max`` about the origin."""

    index: int = 0
    r_max: float = None
    center: tuple = (0.0, 0.0)   # reference point tracked by the constraint

    def __post_init__(self):
        if self.r_max is not None and self.r_max <= 0:
            raise ConfigError("r_max must be positive")


@dataclass(frozen=True)
class BoundaryNodes:
    """Free-form deformation of submesh ``index`` driven by the density on ``marker``."""

    index: int = 0
    scheme: object = field(default_factory=EikonalAdvect)
    marker: int = GAMMA

    def __post_init__(self):
        s = self.scheme
        if isinstance(s, H1):
            if s.alpha < 0:
                raise ConfigError("alpha must be nonnegative")
        elif isinstance(s, EikonalAdvect):
            if s.alpha0 < 0 or s.alpha1 < 0:
                raise ConfigError("alpha0 and alpha1 must be nonnegative")
        else:
            raise ConfigError(f"unknown deformation scheme {s!r}")


@dataclass
class DeformField:
    """Displacement per vertex of one submesh (world coordinates)."""

    index: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise SolverError("deformation field is not finite")

    @property
    def max_norm(self):
        return float(np.linalg.norm(self.values, axis=1).max()) if len(self.values) else 0.0


# ---------------------------------------------------------------- rigid representers


def riesz_translation(density, submesh):
    """d = -(1/|mesh|) int_Gamma n g dS: the constant-field representer."""
    area = float(submesh.areas.sum())
    if area <= 0:
        raise ConfigError("submesh has zero area")
    return -normal_integral(density) / area


def _rotation_norm2(submesh, center, alpha):
    pts, w, _ = map_triangle_rule(submesh.cell_coords(), 2)
    r2 = (pts[..., 0] - center[0]) ** 2 + (pts[..., 1] - center[1]) ** 2
    # grad s_rot is the constant skew matrix with Frobenius norm^2 = 2
    return float(np.sum(w * r2) + 2.0 * alpha * submesh.areas.sum())


def riesz_rotation(density, submesh, center, alpha=0.0):
    """Angular rate omega = -dJ[s_rot] / (int alpha grad s_rot : grad s_rot + |s_rot|^2)."""
    den = _rotation_norm2(submesh, center, alpha)
    if den <= 0:
        raise ConfigError("rotation representer has a zero denominator")
    return -directional_derivative(density, rotation_field(center)) / den


# ---------------------------------------------------------------- P1 helpers


def _drift_matrix(mesh, w):
    """B_ij = int (w . grad phi_i) phi_j for a cellwise-constant vector field w."""
    G = mesh.gradients                                   # (m, 3, 2)
    wg = np.einsum("kd,kid->ki", w, G) * (mesh.areas / 3.0)[:, None]
    rows = np.repeat(mesh.cells, 3, axis=1)
    cols = np.tile(mesh.cells, (1, 3))
    vals = np.repeat(wg, 3, axis=1)
    n = mesh.num_vertices
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))


def _convection_matrix(mesh, w):
    """C_ij = int (w . grad phi_j) phi_i for a cellwise-constant vector field w."""
    return _drift_matrix(mesh, w).T.tocsr()


def _lumped_load(mesh, values):
    """int values_K phi_i over cells (cellwise-constant values)."""
    b = np.zeros(mesh.num_vertices)
    np.add.at(b, mesh.cells, np.repeat((values * mesh.areas / 3.0)[:, None], 3, axis=1))
    return b


def _solve(A, b, what):
    try:
        u = spla.spsolve(A.tocsc(), b)
    except RuntimeError as exc:
        raise SolverError(f"{what}: factorization failed: {exc}") from None
    if not np.all(np.isfinite(u)):
        raise SolverError(f"{what}: singular system")
    res = fem.backward_error(A, u, b)
    if res > 1e-10:
        raise SolverError(f"{what}: residual {res:.2e}", residual=res)
    return u


def nodal_boundary_vector(density, num_vertices):
    """Length-weighted vertex averages of the facet vectors g n."""
    if density.vertex_ids is None:
        raise ValueError("density must be attached to mesh vertices")
    L = density.lengths
    gn = density.values[:, None] * density.normals * L[:, None]
    acc = np.zeros((num_vertices, 2))
    wsum = np.zeros(num_vertices)
    for e in (0, 1):
        np.add.at(acc, density.vertex_ids[:, e], gn)
        np.add.at(wsum, density.vertex_ids[:, e], L)
    vv = np.flatnonzero(wsum > 0)
    out = np.zeros((num_vertices, 2))
    out[vv] = acc[vv] / wsum[vv, None]
    return vv, out[vv]


# ---------------------------------------------------------------- Eikonal and advection


def solve_eikonal(submesh, marker=GAMMA, alpha1=25.0, tol=1e-8, maxiter=100):
    """Smoothed distance: -alpha1 Lap e + |grad e|^2 = 1, e = 0 on ``marker``.

    The quadratic term is linearized about the previous iterate,
    |grad e|^2 ~ 2 grad e_old . grad e - |grad e_old|^2, starting from e = 0.
    Other boundaries carry zero Neumann data.
    """
    if alpha1 <= 0:
        raise ConfigError("alpha1 must be positive")
    n = submesh.num_vertices
    K = fem.assemble_laplace(submesh, alpha1).tocsr(n)
    dofs = submesh.marker_vertices(marker)
    if len(dofs) == 0:
        raise ConfigError(f"submesh has no facets with marker {marker}")
    e = np.zeros(n)
    diff = np.inf
    for _ in range(maxiter):
        g_old = np.einsum("kid,ki->kd", submesh.gradients, e[submesh.cells])
        A = K + 2.0 * _convection_matrix(submesh, g_old)
        b = _lumped_load(submesh, 1.0 + np.einsum("kd,kd->k", g_old, g_old))
        system = fem.apply_dirichlet(A.tocsr(), b, dofs, np.zeros(len(dofs)))
        e_new = _solve(system.A, system.b, "eikonal")
        diff = float(np.abs(e_new - e).max())
        e = e_new
        if diff < tol:
            return e
    raise SolverError(f"eikonal iteration did not converge (last change {diff:.2e})", residual=diff)


def solve_advection_deform(submesh, eps, density, alpha0=1e-3):
    """Per-component solve of int alpha0 grad d . grad s + d grad(eps) . grad s = 0.

    d = -g n on the density's facets (strongly), zero Neumann elsewhere.
    """
    n = submesh.num_vertices
    geps = np.einsum("kid,ki->kd", submesh.gradients, np.asarray(eps)[submesh.cells])
    A = fem.assemble_laplace(submesh, alpha0).tocsr(n) if alpha0 > 0 else sp.csr_matrix((n, n))
    A = (A + _drift_matrix(submesh, geps)).tocsr()
    dofs, gn = nodal_boundary_vector(density, n)
    out = np.zeros((n, 2))
    for k in range(2):
        system = fem.apply_dirichlet(A, np.zeros(n), dofs, -gn[:, k])
        out[:, k] = _solve(system.A, system.b, "advection deformation")
    return DeformField(density.mesh_index, out)


def h1_riesz(submesh, density, alpha=1e-3):
    """Vector P1 solve of int alpha grad d : grad s + d . s = -int_Gamma (s . n) g dS."""
    if alpha < 0:
        raise ConfigError("alpha must be nonnegative")
    n = submesh.num_vertices
    A = fem.assemble_mass(submesh).tocsr(n)
    if alpha > 0:
        A = A + fem.assemble_laplace(submesh, alpha).tocsr(n)
    gnL = density.values[:, None] * density.normals * density.lengths[:, None]
    rhs = np.zeros((n, 2))
    for e in (0, 1):
        np.add.at(rhs, density.vertex_ids[:, e], -0.5 * gnL)
    try:
        lu = spla.splu(A.tocsc())
    except RuntimeError as exc:
        raise SolverError(f"H1 representer: singular system ({exc})") from None
    d = np.column_stack([lu.solve(rhs[:, 0]), lu.solve(rhs[:, 1])])
    return DeformField(density.mesh_index, d)


def h1_energy(submesh, d, alpha):
    """alpha |grad d|^2 + |d|^2 for a vector P1 field."""
    n = submesh.num_vertices
    A = fem.assemble_mass(submesh).tocsr(n)
    if alpha > 0:
        A = A + fem.assemble_laplace(submesh, alpha).tocsr(n)
    return float(sum(d[:, k] @ (A @ d[:, k]) for k in range(2)))


def boundary_representer(stack, design, density):
    """DeformField for a BoundaryNodes design."""
    mesh = stack.submeshes[design.index]
    s = design.scheme
    if isinstance(s, H1):
        return h1_riesz(mesh, density, s.alpha)
    eps = solve_eikonal(mesh, design.marker, s.alpha1)
    return solve_advection_deform(mesh, eps, density, s.alpha0)


def representer(stack, design, density):
    """Descent direction of the matching type: omega, a 2-vector or a DeformField."""
    mesh = stack.submeshes[design.index]
    if isinstance(design, Rotation):
        return riesz_rotation(density, mesh, current_center(stack, design), design.alpha)
    if isinstance(design, Translation):
        return riesz_translation(density, mesh)
    return boundary_representer(stack, design, density)


def slope(design, density, direction, stack=None):
    """dJ along ``direction`` (negative for descent directions)."""
    if isinstance(design, Rotation):
        c = current_center(stack, design)
        return float(direction) * directional_derivative(density, rotation_field(c))
    if isinstance(design, Translation):
        return directional_derivative(density, np.asarray(direction, dtype=float))
    return directional_derivative(density, direction.values)


# ---------------------------------------------------------------- updates


def current_center(stack, design):
    """Rotation center / tracked reference point in world coordinates."""
    pose = stack.poses[design.index]
    return tuple(np.asarray(design.center, dtype=float) + np.asarray(pose.translation, dtype=float))


def _check_areas(x, c, what):
    a = 0.5 * ((x[c[:, 1], 0] - x[c[:, 0], 0]) * (x[c[:, 2], 1] - x[c[:, 0], 1])
               - (x[c[:, 2], 0] - x[c[:, 0], 0]) * (x[c[:, 1], 1] - x[c[:, 0], 1]))
    if np.any(a <= 0):
        raise InvalidStepError(f"{what}: {int(np.sum(a <= 0))} cells with nonpositive area")


def updated_poses(stack, designs, directions, xi):
    poses = list(stack.poses)
    for design, direction in zip(designs, directions):
        pose = poses[design.index]
        if isinstance(design, Rotation):
            if pose.rotation_center != tuple(design.center):
                pose = RigidPose(pose.rotation_angle, tuple(design.center), pose.translation)
            poses[design.index] = pose.rotated(xi * float(direction))
        elif isinstance(design, Translation):
            poses[design.index] = pose.translated(xi * np.asarray(direction, dtype=float))
    return poses


def apply_design_update(stack, designs, directions, xi):
    """New stack after a step of length ``xi`` along the given directions.

    ``designs`` and ``directions`` may be single objects or matching lists.
    Rotation and translation change poses; boundary designs move the
    submesh vertices (displacements are given in world coordinates).
    Nothing is mutated; an invalid step raises before any rebuild.
    """
    if not isinstance(designs, (list, tuple)):
        designs, directions = [designs], [directions]
    if xi == 0:
        return stack
    if not math.isfinite(xi):
        raise InvalidStepError("step length must be finite")
    poses = updated_poses(stack, designs, directions, xi)
    base = list(stack.base_submeshes)
    for design, direction in zip(designs, directions):
        if isinstance(design, BoundaryNodes):
            i = design.index
            pose = poses[i]
            ct, st = math.cos(-pose.rotation_angle), math.sin(-pose.rotation_angle)
            d = np.asarray(direction.values, dtype=float)
            d_base = np.column_stack([ct * d[:, 0] - st * d[:, 1], st * d[:, 0] + ct * d[:, 1]])
            x = base[i].vertices + xi * d_base
            _check_areas(x, base[i].cells, f"submesh {i}")
            base[i] = base[i].with_vertices(x)
    return rebuild(stack, base, poses)
