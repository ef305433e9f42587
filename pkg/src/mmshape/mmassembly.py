"""MultiMesh weak form for scalar elliptic problems.

One background mesh plus pairwise-disjoint submeshes placed on top.  The
bilinear form is

    a(T, v) + a_IP(T, v) + a_O(T, v) - c (T, v)

with volume terms on the visible parts, symmetric interior penalty coupling
on the visible submesh boundaries and gradient-jump stabilization on the
hidden parts of cut background cells.  Conductivity weights the Nitsche flux,
penalty and stabilization (lambda is single valued there by the halo rule).
"""
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.sparse.linalg as spla

from . import cutgeom, fem
from .cutgeom import COVERED
from .errors import ConfigError, SolverError
from .mesh import EXTERIOR, FILL, GAMMA, GAMMA_E, GAMMA_I, INSULATION, LAMBDA, METAL, RigidPose, apply_rigid
from .quadrature import gauss_segment

INTERIOR_MARKERS = (LAMBDA, GAMMA_I, GAMMA_E)


@dataclass(frozen=True)
class NitscheParams:
    beta0: float = 4.0
    beta1: float = 4.0

    def __post_init__(self):
        if not self.beta0 > 0:
            raise ConfigError("beta0 must be positive")
        if not self.beta1 >= 0:
            raise ConfigError("beta1 must be nonnegative")


@dataclass(frozen=True)
class Dirichlet:
    value: Union[float, Callable] = 0.0


@dataclass(frozen=True)
class Robin:
    t_ex: Union[float, Callable] = 0.0
    alpha: float = 1.0


@dataclass
class ProblemSpec:
    """Coefficients, boundary conditions and objective of a scalar problem."""

    conductivity: dict = field(default_factory=lambda: {FILL: 0.08, INSULATION: 0.19, METAL: 40.0})
    source: Union[dict, Callable] = field(default_factory=lambda: {FILL: 0.0, INSULATION: 0.0, METAL: 50.0})
    reaction: float = 0.0
    bcs: dict = field(default_factory=dict)
    functional: str = "l2sq"
    q: float = 3.0

    def __post_init__(self):
        if any(v <= 0 for v in self.conductivity.values()):
            raise ConfigError("conductivity must be positive in every region")
        if self.functional not in ("l2sq", "lq"):
            raise ConfigError(f"unknown functional {self.functional!r}")
        if self.functional == "lq" and not self.q > 1:
            raise ConfigError("q must exceed 1")


def example_spec():
    """-Laplace T = x sin(x) cos(y), T = 1 on the obstacle, T = 0 outside; J = int T^2."""
    return ProblemSpec(
        conductivity={FILL: 1.0},
        source=lambda x, y: x * np.sin(x) * np.cos(y),
        reaction=0.0,
        bcs={GAMMA: Dirichlet(1.0), EXTERIOR: Dirichlet(0.0)},
        functional="l2sq",
    )


def cable_spec(reaction=0.04, t_ex=3.2, q=3.0, conductivity=None, source=None):
    """Heat in a multi-cable: Robin exterior, J = int |T|^q / q."""
    return ProblemSpec(
        conductivity=dict(conductivity or {FILL: 0.08, INSULATION: 0.19, METAL: 40.0}),
        source=dict(source or {FILL: 0.0, INSULATION: 0.0, METAL: 50.0}),
        reaction=reaction,
        bcs={EXTERIOR: Robin(t_ex)},
        functional="lq",
        q=q,
    )


# ---------------------------------------------------------------- stack


@dataclass
class MultiMeshStack:
    background: object
    base_submeshes: list
    poses: list
    submeshes: list
    footprints: list
    cores: list
    cls: cutgeom.Classification
    quad: cutgeom.CutQuadrature
    segments: list
    overlaps: list
    offsets: np.ndarray
    active: np.ndarray

    @property
    def ndof(self):
        return int(self.offsets[-1])

    @property
    def meshes(self):
        return [self.background, *self.submeshes]

    def block(self, u, i):
        """Coefficients of mesh ``i`` (0 = background) from a global vector."""
        return u[self.offsets[i]:self.offsets[i + 1]]

    @property
    def active_bg_cells(self):
        return np.flatnonzero(self.cls.status != COVERED)


def build_stack(background, submeshes=(), poses=None, quad_degree=4, check_halo=True):
    """Place submeshes on the background and compute all cut structures."""
    submeshes = list(submeshes)
    poses = list(poses) if poses is not None else [RigidPose() for _ in submeshes]
    if len(poses) != len(submeshes):
        raise ConfigError("one pose per submesh required")
    posed = [apply_rigid(m, p) for m, p in zip(submeshes, poses)]
    footprints = [cutgeom.footprint_polygon(m) for m in posed]
    cores = [cutgeom.core_polygon(m) if check_halo else None for m in posed]
    cls = cutgeom.classify_cells(background, footprints, cores)
    quad = cutgeom.cut_quadrature(cls, quad_degree)
    h = [0.5 * (background.h_max + m.h_max) for m in posed]
    index = cutgeom._mesh_index(background) if posed else None
    segments = [cutgeom.interface_segments(m, background, cls, h[j], index) for j, m in enumerate(posed)]
    overlaps = [cutgeom.overlap_pieces(m, background, cls, owner=j) for j, m in enumerate(posed)]
    sizes = [background.num_vertices] + [m.num_vertices for m in posed]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    active = np.ones(offsets[-1], dtype=bool)
    bg_active = np.zeros(background.num_vertices, dtype=bool)
    bg_active[background.cells[cls.status != COVERED].ravel()] = True
    active[: background.num_vertices] = bg_active
    return MultiMeshStack(background, submeshes, poses, posed, footprints, cores, cls, quad,
                          segments, overlaps, offsets, active)


def rebuild(stack, base_submeshes=None, poses=None):
    """Stack with new submeshes and/or poses on the same background and settings."""
    base = stack.base_submeshes if base_submeshes is None else base_submeshes
    poses = stack.poses if poses is None else poses
    return build_stack(stack.background, base, poses, stack.quad.degree,
                       check_halo=any(c is not None for c in stack.cores) or not stack.submeshes)


def with_poses(stack, poses):
    return rebuild(stack, poses=poses)


def with_submeshes(stack, base_submeshes):
    return rebuild(stack, base_submeshes=base_submeshes)


# ---------------------------------------------------------------- volume terms


def _region_values(mesh, table):
    return np.array([table[r] for r in mesh.cell_region.tolist()], dtype=float)


def assemble_visible_volume(stack, spec, include_source=True):
    """Stiffness, reaction mass and source on the visible parts of all meshes."""
    out = fem.Triplets()
    b = np.zeros(stack.ndof)
    bg = stack.background
    act = stack.active_bg_cells
    vis_area = bg.areas.copy()
    for k in stack.cls.hidden:
        vis_area[k] -= stack.quad.hidden_area(k)
    lam_bg = _region_values(bg, spec.conductivity)
    out.extend(fem.assemble_laplace(bg, lam_bg, cell_area=vis_area, cells=act))
    hidden = stack.quad.hidden
    if spec.reaction:
        out.extend(fem.assemble_mass(bg, spec.reaction, cells=act, hidden=hidden), scale=-1.0)
    if include_source:
        b[: bg.num_vertices] += fem.assemble_load(bg, spec.source, stack.quad.degree, cells=act, hidden=hidden)
    for j, m in enumerate(stack.submeshes):
        off = stack.offsets[j + 1]
        out.extend(fem.assemble_laplace(m, _region_values(m, spec.conductivity)), offset=off)
        if spec.reaction:
            out.extend(fem.assemble_mass(m, spec.reaction), offset=off, scale=-1.0)
        if include_source:
            b[off: off + m.num_vertices] += fem.assemble_load(m, spec.source, stack.quad.degree)
    return out, b


# ---------------------------------------------------------------- interface coupling


def _segment_basis(stack, j, npts=2):
    """Quadrature data on interface segments of submesh ``j``.

    Returns dofs (s, 6) [submesh | background], weights (s, q), values
    (s, q, 6) with the jump sign folded in, normal derivatives (s, 6) and the
    conductivities on each side.
    """
    seg = stack.segments[j]
    sub = stack.submeshes[j]
    bg = stack.background
    t, w = gauss_segment(npts)
    L = seg.length
    pts = seg.p0[:, None, :] + t[None, :, None] * (seg.p1 - seg.p0)[:, None, :]
    s, q = len(seg), len(t)
    sub_c = sub.cell_coords(seg.sub_cell)
    bg_c = bg.cell_coords(seg.bg_cell)
    lam1 = cutgeom.barycentric(np.repeat(sub_c, q, axis=0), pts.reshape(-1, 2)).reshape(s, q, 3)
    lam0 = cutgeom.barycentric(np.repeat(bg_c, q, axis=0), pts.reshape(-1, 2)).reshape(s, q, 3)
    jump = np.concatenate([lam1, -lam0], axis=2)
    g1 = sub.gradients[seg.sub_cell]
    g0 = bg.gradients[seg.bg_cell]
    dn1 = np.einsum("sid,sd->si", g1, seg.normal)
    dn0 = np.einsum("sid,sd->si", g0, seg.normal)
    dofs = np.concatenate([sub.cells[seg.sub_cell] + stack.offsets[j + 1], bg.cells[seg.bg_cell]], axis=1)
    return dofs, w[None, :] * L[:, None], jump, dn1, dn0


def assemble_interface_penalty(stack, spec, params, parts=("flux", "penalty")):
    """Symmetric interior penalty coupling across every visible submesh boundary.

    -<lambda n.grad T>[v] - [T]<lambda n.grad v> + beta0 lambda / h [T][v]
    with [psi] = psi_sub - psi_bg and n the submesh outward normal.
    """
    out = fem.Triplets()
    for j in range(len(stack.submeshes)):
        seg = stack.segments[j]
        if len(seg) == 0:
            continue
        dofs, W, jump, dn1, dn0 = _segment_basis(stack, j)
        lam1 = _region_values(stack.submeshes[j], spec.conductivity)[seg.sub_cell]
        lam0 = _region_values(stack.background, spec.conductivity)[seg.bg_cell]
        flux = 0.5 * np.concatenate([lam1[:, None] * dn1, lam0[:, None] * dn0], axis=1)
        local = np.zeros((len(seg), 6, 6))
        if "flux" in parts:
            jint = np.einsum("sq,sqi->si", W, jump)
            local -= np.einsum("si,sj->sij", jint, flux) + np.einsum("si,sj->sij", flux, jint)
        if "penalty" in parts:
            pen = params.beta0 * 0.5 * (lam0 + lam1) / seg.h
            local += pen[:, None, None] * np.einsum("sq,sqi,sqj->sij", W, jump, jump)
        rows = np.repeat(dofs, 6, axis=1)
        cols = np.tile(dofs, (1, 6))
        out.add(rows, cols, local)
    return out


def assemble_overlap_stab(stack, spec, params):
    """beta1 lambda int_O [grad T].[grad v] over the hidden parts of cut cells."""
    out = fem.Triplets()
    if params.beta1 == 0:
        return out
    bg = stack.background
    for j, m in enumerate(stack.submeshes):
        ov = stack.overlaps[j]
        if len(ov) == 0:
            continue
        G = np.concatenate([m.gradients[ov.sub_cell], -bg.gradients[ov.bg_cell]], axis=1)
        lam = _region_values(m, spec.conductivity)[ov.sub_cell]
        local = np.einsum("sid,sjd->sij", G, G) * (params.beta1 * lam * ov.area)[:, None, None]
        dofs = np.concatenate([m.cells[ov.sub_cell] + stack.offsets[j + 1], bg.cells[ov.bg_cell]], axis=1)
        out.add(np.repeat(dofs, 6, axis=1), np.tile(dofs, (1, 6)), local)
    return out


# ---------------------------------------------------------------- boundary conditions


def _boundary_markers(mesh):
    present = set(np.unique(mesh.facet_marker).tolist())
    return present - set(INTERIOR_MARKERS) - {0}


def _collect_bcs(stack, spec, adjoint=False):
    """Robin contributions and Dirichlet dofs/values (homogeneous for the adjoint)."""
    trip = fem.Triplets()
    b = np.zeros(stack.ndof)
    dofs, vals = [], []
    for i, m in enumerate(stack.meshes):
        off = stack.offsets[i]
        for marker in sorted(_boundary_markers(m)):
            if marker not in spec.bcs:
                raise ConfigError(f"no boundary condition for marker {marker}")
            bc = spec.bcs[marker]
            if isinstance(bc, Dirichlet):
                d, v = fem.dirichlet_dofs(m, marker, bc.value, off)
                dofs.append(d)
                vals.append(np.zeros_like(v) if adjoint else v)
            elif isinstance(bc, Robin):
                r, rb = fem.assemble_robin(m, marker, bc.alpha, 0.0 if adjoint else bc.t_ex)
                trip.extend(r, offset=off)
                b[off: off + m.num_vertices] += rb
            else:
                raise ConfigError(f"unsupported boundary condition {bc!r}")
    inactive = np.flatnonzero(~stack.active)
    dofs.append(inactive)
    vals.append(np.zeros(len(inactive)))
    dofs = np.concatenate(dofs).astype(np.int64)
    vals = np.concatenate(vals)
    dofs, first = np.unique(dofs, return_index=True)
    return trip, b, dofs, vals[first]


def assemble_operator(stack, spec, params):
    """Full matrix before constraints: volume + interface + overlap (+ Robin added later)."""
    vol, _ = assemble_visible_volume(stack, spec, include_source=False)
    trip = fem.Triplets()
    trip.extend(vol)
    trip.extend(assemble_interface_penalty(stack, spec, params))
    trip.extend(assemble_overlap_stab(stack, spec, params))
    return trip


def assemble_state(stack, spec, params=NitscheParams()):
    vol, b = assemble_visible_volume(stack, spec)
    trip = fem.Triplets()
    trip.extend(vol)
    trip.extend(assemble_interface_penalty(stack, spec, params))
    trip.extend(assemble_overlap_stab(stack, spec, params))
    bc_trip, bc_b, dofs, vals = _collect_bcs(stack, spec)
    trip.extend(bc_trip)
    A = trip.tocsr(stack.ndof)
    return fem.apply_dirichlet(A, b + bc_b, dofs, vals)


def functional_density(spec, T):
    if spec.functional == "l2sq":
        return T * T
    return np.abs(T) ** spec.q / spec.q


def functional_derivative(spec, T):
    if spec.functional == "l2sq":
        return 2.0 * T
    return T * np.abs(T) ** (spec.q - 2.0)


def _visible_quadrature(stack, degree=None):
    """Yield (mesh index, cell, barycentric, weight) over visible parts of every mesh."""
    degree = degree or stack.quad.degree
    bg = stack.background
    cell, P, B, W = fem.cell_quadrature(bg, degree, stack.active_bg_cells, stack.quad.hidden)
    yield 0, cell, P, B, W
    for j, m in enumerate(stack.submeshes):
        cell, P, B, W = fem.cell_quadrature(m, degree)
        yield j + 1, cell, P, B, W


def eval_functional(stack, spec, T):
    total = 0.0
    for i, cell, _, B, W in _visible_quadrature(stack):
        m = stack.meshes[i]
        Tq = np.einsum("qi,qi->q", B, stack.block(T, i)[m.cells[cell]])
        total += float(np.sum(W * functional_density(spec, Tq)))
    return total


def integrate_visible(stack, u, func, degree=None):
    """int func(u_h, x, y) over the visible multimesh domain."""
    total = 0.0
    for i, cell, P, B, W in _visible_quadrature(stack, degree):
        m = stack.meshes[i]
        uq = np.einsum("qi,qi->q", B, stack.block(u, i)[m.cells[cell]])
        total += float(np.sum(W * func(uq, P[:, 0], P[:, 1])))
    return total


def l2_error(stack, u, exact, degree=4):
    err2 = integrate_visible(stack, u, lambda uq, x, y: (uq - exact(x, y)) ** 2, degree)
    return float(np.sqrt(max(err2, 0.0)))


def assemble_adjoint(stack, spec, params, T):
    """Adjoint system: same operator, rhs -(dj/dT, v), homogeneous boundary data."""
    vol, _ = assemble_visible_volume(stack, spec, include_source=False)
    trip = fem.Triplets()
    trip.extend(vol)
    trip.extend(assemble_interface_penalty(stack, spec, params))
    trip.extend(assemble_overlap_stab(stack, spec, params))
    bc_trip, _, dofs, vals = _collect_bcs(stack, spec, adjoint=True)
    trip.extend(bc_trip)
    A = trip.tocsr(stack.ndof)
    b = np.zeros(stack.ndof)
    for i, cell, _, B, W in _visible_quadrature(stack):
        m = stack.meshes[i]
        Tq = np.einsum("qi,qi->q", B, stack.block(T, i)[m.cells[cell]])
        part = np.zeros(m.num_vertices)
        np.add.at(part, m.cells[cell], (-W * functional_derivative(spec, Tq))[:, None] * B)
        b[stack.offsets[i]: stack.offsets[i + 1]] += part
    return fem.apply_dirichlet(A, b, dofs, vals)


# ---------------------------------------------------------------- solves


@dataclass
class Solution:
    stack: MultiMeshStack
    spec: ProblemSpec
    params: NitscheParams
    T: np.ndarray
    J: float
    system: fem.SparseSystem
    adjoint: np.ndarray = None
    _lu: object = None

    def field(self, i, which="T"):
        u = self.T if which == "T" else self.adjoint
        return self.stack.block(u, i)


def _factor_solve(system, rhs, lu=None, rel_tol=1e-10):
    """LU solve with one refinement step; accepts on normwise backward error."""
    if lu is None:
        lu = spla.splu(system.A.tocsc())
    u = lu.solve(rhs)
    res = fem.backward_error(system.A, u, rhs)
    if not np.all(np.isfinite(u)) or res > rel_tol:
        u = u + lu.solve(rhs - system.A @ u)
        res = fem.backward_error(system.A, u, rhs)
        if not np.all(np.isfinite(u)) or res > rel_tol:
            raise SolverError("linear solve missed the residual target", residual=res)
    return u, lu


def solve_state(stack, spec, params=NitscheParams()):
    system = assemble_state(stack, spec, params)
    try:
        T, lu = _factor_solve(system, system.b)
    except RuntimeError as exc:
        if isinstance(exc, SolverError):
            raise
        raise SolverError(f"factorization failed: {exc}") from None
    return Solution(stack, spec, params, T, eval_functional(stack, spec, T), system, _lu=lu)


def solve_adjoint(sol):
    """Adjoint solve reusing the state factorization (the operator is self-adjoint)."""
    adj = assemble_adjoint(sol.stack, sol.spec, sol.params, sol.T)
    p, _ = _factor_solve(adj, adj.b, sol._lu)
    sol.adjoint = p
    return p
