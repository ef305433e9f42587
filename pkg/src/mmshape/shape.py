"""Boundary gradient densities, geometric penalty functionals and Taylor tests.

A density ``g`` on a set of boundary facets represents the shape derivative
dJ[s] = int_Gamma (s . n) g dS, with ``n`` the outward normal of the
computational domain.  Densities are piecewise constant per facet.
"""
from dataclasses import dataclass
import csv

import numpy as np

from .cutgeom import outward_facet_normals
from .errors import MeshError
from .mesh import GAMMA, GAMMA_E, GAMMA_I
from . import fem
from .mmassembly import functional_density, functional_derivative


@dataclass
class GradientDensity:
    values: np.ndarray       # g per facet
    a: np.ndarray            # facet start points
    b: np.ndarray            # facet end points
    normals: np.ndarray      # unit normals
    mesh_index: int = -1     # submesh index in the stack (-1: free-standing curve)
    facets: np.ndarray = None
    vertex_ids: np.ndarray = None  # (k, 2) endpoint vertex ids on the submesh

    @property
    def midpoints(self):
        return 0.5 * (self.a + self.b)

    @property
    def lengths(self):
        return np.linalg.norm(self.b - self.a, axis=1)

    def __add__(self, other):
        if other.values.shape != self.values.shape or not np.allclose(other.a, self.a):
            raise ValueError("densities live on different facets")
        return GradientDensity(self.values + other.values, self.a, self.b, self.normals,
                               self.mesh_index, self.facets, self.vertex_ids)

    def scaled(self, c):
        return GradientDensity(c * self.values, self.a, self.b, self.normals, self.mesh_index,
                               self.facets, self.vertex_ids)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "nx", "ny", "g"])
            for (x, y), (nx, ny), g in zip(self.midpoints, self.normals, self.values):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(nx)), repr(float(ny)), repr(float(g))])


def _facet_density(mesh, facets, values, normals, j):
    return GradientDensity(np.asarray(values, dtype=float), mesh.vertices[mesh.facets[facets, 0]],
                           mesh.vertices[mesh.facets[facets, 1]], normals, j, facets,
                           mesh.facets[facets].copy())


def _residuals(sol, mesh, T, p, cells=None):
    """State and adjoint residuals a(u, phi) - l(phi) over ``cells`` of one submesh."""
    spec = sol.spec
    n = mesh.num_vertices
    cells = np.arange(mesh.num_cells) if cells is None else np.asarray(cells)
    K = fem.assemble_laplace(mesh, spec.conductivity, cells=cells).tocsr(n)
    if spec.reaction:
        K = K - fem.assemble_mass(mesh, spec.reaction, cells=cells).tocsr(n)
    rT = K @ T - fem.assemble_load(mesh, spec.source, cells=cells)
    cell, _, B, W = fem.cell_quadrature(mesh, 4, cells)
    Tq = np.einsum("qi,qi->q", B, T[mesh.cells[cell]])
    rp = K @ p
    np.add.at(rp, mesh.cells[cell], (W * functional_derivative(spec, Tq))[:, None] * B)
    return rT, rp


def _facet_product(ends, a, b):
    """Facet mean of the product of two linear traces given by nodal values."""
    a0, a1 = a[ends[:, 0]], a[ends[:, 1]]
    b0, b1 = b[ends[:, 0]], b[ends[:, 1]]
    return (2 * a0 * b0 + 2 * a1 * b1 + a0 * b1 + a1 * b0) / 6.0


def density_dirichlet_example(sol, j=0, marker=GAMMA, flux="residual"):
    """g = j(T) - lam (n . grad adjoint)(n . grad T) on the Dirichlet boundary of submesh ``j``.

    Dirichlet data is extended constantly off the boundary, so its normal
    derivative drops out.  ``flux="cell"`` takes normal derivatives from the
    adjacent cell gradients; ``flux="residual"`` recovers them from the
    discrete residuals of the state and adjoint equations (default, far more
    accurate on P1).
    """
    if sol.adjoint is None:
        raise ValueError("adjoint must be solved before building the density")
    if flux not in ("residual", "cell"):
        raise ValueError(f"unknown flux recovery {flux!r}")
    stack = sol.stack
    mesh = stack.submeshes[j]
    facets = mesh.facets_with(marker)
    normals, cells = outward_facet_normals(mesh, facets)
    T = stack.block(sol.T, j + 1)
    p = stack.block(sol.adjoint, j + 1)
    ends = mesh.facets[facets]
    lam = np.array([sol.spec.conductivity[r] for r in mesh.cell_region[cells]], dtype=float)
    Tmid = 0.5 * (T[ends[:, 0]] + T[ends[:, 1]])
    if flux == "cell":
        gT = np.einsum("kid,ki->kd", mesh.gradients[cells], T[mesh.cells[cells]])
        gp = np.einsum("kid,ki->kd", mesh.gradients[cells], p[mesh.cells[cells]])
        prod = lam * np.einsum("kd,kd->k", normals, gp) * np.einsum("kd,kd->k", normals, gT)
    else:
        rT, rp = _residuals(sol, mesh, T, p)
        prod = _facet_product(ends, fem.boundary_flux(mesh, rT, marker),
                              fem.boundary_flux(mesh, rp, marker)) / lam
    g = functional_density(sol.spec, Tmid) - prod
    return _facet_density(mesh, facets, g, normals, j)


def _interface_sides(mesh, facets):
    """Per facet: (+ cell, - cell, unit normal from - to +); + is the lower region tag."""
    plus = np.empty(len(facets), dtype=np.int64)
    minus = np.empty(len(facets), dtype=np.int64)
    for n, f in enumerate(facets.tolist()):
        cs = mesh.facet_cells(f)
        if len(cs) != 2 or mesh.cell_region[cs[0]] == mesh.cell_region[cs[1]]:
            raise MeshError(f"facet {f} is not shared by two regions")
        plus[n], minus[n] = sorted(cs, key=lambda k: mesh.cell_region[k])
    ends = mesh.facets[facets]
    a = mesh.vertices[ends[:, 0]]
    t = mesh.vertices[ends[:, 1]] - a
    nrm = np.column_stack([t[:, 1], -t[:, 0]]) / np.linalg.norm(t, axis=1)[:, None]
    centroid = mesh.vertices[mesh.cells[minus]].mean(axis=1)
    flip = np.einsum("kd,kd->k", nrm, centroid - a) > 0
    nrm[flip] *= -1
    return plus, minus, nrm


def density_multicable(sol, j=0, flux="residual"):
    """Transmission-interface density on the metal/insulation and insulation/fill loops.

    The "+" side is the outer material (insulation at the metal interface,
    fill at the insulation interface), n points from "-" to "+" and jumps
    are psi+ - psi-:

        g = [-cTp - fp] - lam+ dp+/dn [dT/dn] + [lam] grad_G p+ . grad_G T+

    With ``flux="residual"`` the conormal fluxes lam dT/dn, lam dp/dn are
    recovered from residuals over the "-" region (they are continuous across
    the interface), so [dT/dn] = q_T (1/lam+ - 1/lam-).  ``flux="cell"`` uses
    one-sided cell gradients instead.

    The stored density is the negated bracket, so that dJ[s] = int s.n g dS
    holds with n pointing from "-" to "+".
    """
    if sol.adjoint is None:
        raise ValueError("adjoint must be solved before building the density")
    if flux not in ("residual", "cell"):
        raise ValueError(f"unknown flux recovery {flux!r}")
    stack, spec = sol.stack, sol.spec
    if callable(spec.source):
        raise ValueError("multicable density needs piecewise-constant sources")
    mesh = stack.submeshes[j]
    T = stack.block(sol.T, j + 1)
    p = stack.block(sol.adjoint, j + 1)
    parts = []
    for marker in (GAMMA_I, GAMMA_E):
        facets = mesh.facets_with(marker)
        if len(facets) == 0:
            continue
        plus, minus, nrm = _interface_sides(mesh, facets)
        ends = mesh.facets[facets]
        rp_, rm_ = mesh.cell_region[plus], mesh.cell_region[minus]
        lp = np.array([spec.conductivity[r] for r in rp_.tolist()])
        lm = np.array([spec.conductivity[r] for r in rm_.tolist()])
        fp = np.array([spec.source[r] for r in rp_.tolist()])
        fm = np.array([spec.source[r] for r in rm_.tolist()])
        pbar = 0.5 * (p[ends[:, 0]] + p[ends[:, 1]])
        L = np.linalg.norm(mesh.vertices[ends[:, 1]] - mesh.vertices[ends[:, 0]], axis=1)
        dT_t = (T[ends[:, 1]] - T[ends[:, 0]]) / L
        dp_t = (p[ends[:, 1]] - p[ends[:, 0]]) / L
        # the reaction term is continuous across the interface and drops out
        g = -(fp - fm) * pbar + (lp - lm) * dp_t * dT_t
        if flux == "residual":
            inner = np.flatnonzero(np.isin(mesh.cell_region, np.unique(rm_)))
            rT, rp = _residuals(sol, mesh, T, p, inner)
            qT = fem.boundary_flux(mesh, rT, marker)
            qp = fem.boundary_flux(mesh, rp, marker)
            g = g - (1.0 / lp - 1.0 / lm) * _facet_product(ends, qT, qp)
        else:
            gTp = np.einsum("kid,ki->kd", mesh.gradients[plus], T[mesh.cells[plus]])
            gTm = np.einsum("kid,ki->kd", mesh.gradients[minus], T[mesh.cells[minus]])
            gpp = np.einsum("kid,ki->kd", mesh.gradients[plus], p[mesh.cells[plus]])
            dn = lambda v: np.einsum("kd,kd->k", nrm, v)
            g = g - lp * dn(gpp) * (dn(gTp) - dn(gTm))
        # with n from - to + and jumps psi+ - psi-, the bracket is the
        # derivative for the opposite normal; finite differences confirm
        parts.append((facets, -g, nrm))
    facets = np.concatenate([f for f, _, _ in parts])
    return _facet_density(mesh, facets, np.concatenate([g for _, g, _ in parts]),
                          np.vstack([n for _, _, n in parts]), j)


# ---------------------------------------------------------------- geometric penalties


@dataclass
class GeometricValues:
    J_V: float
    J_Cx: float
    J_Cy: float
    fluid_area: float
    obstacle_area: float
    centroid: tuple

    @property
    def total(self):
        return self.J_V + self.J_Cx + self.J_Cy


def polygon_centroid(pts):
    p = np.asarray(pts, dtype=float)
    q = np.roll(p, -1, axis=0)
    cr = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
    A = 0.5 * cr.sum()
    cx = np.sum((p[:, 0] + q[:, 0]) * cr) / (6 * A)
    cy = np.sum((p[:, 1] + q[:, 1]) * cr) / (6 * A)
    return A, cx, cy


def geometric_functionals(loop, target_obstacle_area, target_centroid, gamma1, gamma2, domain_area):
    """Area and centroid penalties of an obstacle bounded by the closed polyline ``loop``.

    The fluid is ``domain_area`` minus the obstacle.  The returned density
    uses normals pointing out of the fluid (into the obstacle):

        g = 2 gamma1 (|Omega| - |Omega_0|)
            + 2 gamma2 / |obstacle| [(Cx - x)(Cx - Cx0) + (Cy - y)(Cy - Cy0)]
    """
    pts = np.asarray(loop, dtype=float)
    if len(pts) < 3:
        raise MeshError("loop must have at least three vertices")
    if np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    A, cx, cy = polygon_centroid(pts)
    if A < 0:
        pts = pts[::-1]
        A = -A
    fluid = domain_area - A
    fluid0 = domain_area - target_obstacle_area
    cx0, cy0 = target_centroid
    vals = GeometricValues(gamma1 * (fluid - fluid0) ** 2, gamma2 * (cx - cx0) ** 2,
                           gamma2 * (cy - cy0) ** 2, fluid, A, (cx, cy))
    a = pts
    b = np.roll(pts, -1, axis=0)
    t = b - a
    L = np.linalg.norm(t, axis=1)
    normals = np.column_stack([-t[:, 1], t[:, 0]]) / L[:, None]   # left of CCW = into obstacle
    mid = 0.5 * (a + b)
    g = 2 * gamma1 * (fluid - fluid0) + 2 * gamma2 / A * (
        (cx - mid[:, 0]) * (cx - cx0) + (cy - mid[:, 1]) * (cy - cy0))
    return vals, GradientDensity(g, a, b, normals)


def loop_is_closed(polyline, tol=1e-12):
    p = np.asarray(polyline, dtype=float)
    return len(p) >= 3 and np.linalg.norm(p[0] - p[-1]) <= tol


# ---------------------------------------------------------------- directional derivatives


def rotation_field(center):
    cx, cy = center

    def s(x):
        x = np.asarray(x, dtype=float)
        return np.column_stack([-(x[:, 1] - cy), x[:, 0] - cx])

    return s


def _midpoint_field(density, s):
    if callable(s):
        return np.asarray(s(density.midpoints), dtype=float).reshape(-1, 2)
    s = np.asarray(s, dtype=float)
    if s.shape == (2,):
        return np.broadcast_to(s, density.a.shape)
    if density.vertex_ids is None:
        raise ValueError("nodal fields need a density attached to mesh vertices")
    return 0.5 * (s[density.vertex_ids[:, 0]] + s[density.vertex_ids[:, 1]])


def directional_derivative(density, s):
    """sum over facets of |facet| (s_mid . n) g.

    ``s`` may be a callable on points, a constant 2-vector, or a nodal field
    (num_vertices, 2) on the density's mesh (averaged to midpoints).
    """
    sm = _midpoint_field(density, s)
    return float(np.sum(density.lengths * np.einsum("kd,kd->k", sm, density.normals) * density.values))


def normal_integral(density):
    """int_Gamma n g dS as a 2-vector."""
    return (density.lengths * density.values) @ density.normals


# ---------------------------------------------------------------- Taylor test


@dataclass
class TaylorReport:
    eps: np.ndarray
    r0: np.ndarray
    r1: np.ndarray
    j0: float
    dj: float
    error: str = None

    @staticmethod
    def _rates(eps, r):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(r[:-1] / r[1:]) / np.log(eps[:-1] / eps[1:])

    @property
    def rates0(self):
        return self._rates(self.eps, self.r0)

    @property
    def rates1(self):
        return self._rates(self.eps, self.r1)

    @staticmethod
    def _fit(eps, r):
        ok = r > 0
        if ok.sum() < 2:
            return float("nan")
        return float(np.polyfit(np.log(eps[ok]), np.log(r[ok]), 1)[0])

    @property
    def fitted_rate0(self):
        """Least-squares slope of log R0 against log eps."""
        return self._fit(self.eps, self.r0)

    @property
    def fitted_rate1(self):
        return self._fit(self.eps, self.r1)

    def write_csv(self, path):
        r0 = np.concatenate([[np.nan], self.rates0])
        r1 = np.concatenate([[np.nan], self.rates1])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eps", "R0", "R1", "rate0", "rate1"])
            for row in zip(self.eps, self.r0, self.r1, r0, r1):
                w.writerow([repr(float(v)) for v in row])


def default_eps(n=6, start=1e-1):
    return start * 0.5 ** np.arange(n)


def taylor_test(evaluate, j0, dj, eps=None):
    """Residuals |J(eps) - J0| and |J(eps) - J0 - eps dJ| for decreasing eps.

    ``evaluate(eps)`` returns the functional on the domain perturbed by eps
    along the test direction.  A failing evaluation truncates the report and
    records the error.
    """
    eps = default_eps() if eps is None else np.asarray(eps, dtype=float)
    if len(eps) < 2 or np.any(np.diff(eps) >= 0):
        raise ValueError("eps must be strictly decreasing with at least two entries")
    r0, r1 = [], []
    error = None
    for e in eps:
        try:
            je = evaluate(float(e))
        except Exception as exc:  # report partial results
            error = f"eps={e:g}: {exc}"
            break
        r0.append(abs(je - j0))
        r1.append(abs(je - j0 - e * dj))
    n = len(r0)
    return TaylorReport(eps[:n], np.array(r0), np.array(r1), j0, dj, error)
