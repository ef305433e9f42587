"""Built-in experiments: rotating elliptic obstacle, multi-cable layout, geometric toy."""
from dataclasses import dataclass, field
import math

import numpy as np

from .deform import BoundaryNodes, EikonalAdvect, Rotation, Translation, representer, slope
from .errors import ConfigError
from .fem import l2_error as fem_l2_error, solve_poisson
from .mesh import (EXTERIOR, FILL, GAMMA, LAMBDA, Mesh, RigidPose, boundary_loops, gen_cable_submesh,
                   gen_disk, gen_ellipse_annulus, gen_rect_grid)
from .mmassembly import (Dirichlet, NitscheParams, ProblemSpec, build_stack, cable_spec, example_spec,
                         l2_error as mm_l2_error, rebuild, solve_adjoint, solve_state)
from .shape import (GradientDensity, density_dirichlet_example, density_multicable,
                    geometric_functionals, taylor_test)


# ---------------------------------------------------------------- rotating obstacle


@dataclass
class ExampleRotation:
    """-Lap T = x sin x cos y around an elliptic hole (T = 1) in a rectangle (T = 0).

    The submesh is a disk of radius ``r_sub`` about the pivot ``p`` with the
    elliptic hole offset by ``hole_offset``; the design is its rotation angle.
    """

    n: int = 48                     # background cells per unit length
    n_t: int = 256                  # polygon resolution of the ellipse and the submesh rim
    width: float = 2.0
    height: float = 1.0
    p: tuple = (1.0, 0.5)
    a: float = 0.2
    b: float = 0.08
    hole_offset: tuple = (0.12, 0.0)
    r_sub: float = 0.42
    alpha: float = 1e-3
    params: NitscheParams = field(default_factory=NitscheParams)
    flux: str = "residual"

    def __post_init__(self):
        if self.n < 2 or self.n_t < 16:
            raise ConfigError("mesh resolution too small")
        self.spec = example_spec()
        self.designs = [Rotation(0, tuple(self.p), self.alpha)]

    def background(self):
        return gen_rect_grid(0.0, 0.0, self.width, self.height,
                             int(round(self.n * self.width)), int(round(self.n * self.height)))

    def submesh(self):
        return gen_ellipse_annulus(self.p, self.a, self.b, self.r_sub, max(2, self.n_t // 12),
                                   self.n_t, hole_offset=self.hole_offset)

    def stack(self, theta=0.0):
        return build_stack(self.background(), [self.submesh()], [RigidPose(theta, tuple(self.p))])

    def at(self, stack, theta):
        return rebuild(stack, poses=[RigidPose(theta, tuple(self.p))])

    def solve(self, stack):
        return solve_state(stack, self.spec, self.params)

    def densities(self, stack, sol):
        solve_adjoint(sol)
        return [density_dirichlet_example(sol, 0, flux=self.flux)]

    def design_params(self, stack):
        return {"theta_deg": math.degrees(stack.poses[0].rotation_angle)}

    def sweep(self, thetas, stack=None):
        stack = stack or self.stack()
        return np.array([self.solve(self.at(stack, t)).J for t in thetas])


# ---------------------------------------------------------------- multi-cable


def regular_positions(n, radius, start_deg=90.0, angles_deg=None):
    ang = np.radians(angles_deg if angles_deg is not None else start_deg + 360.0 * np.arange(n) / n)
    return [(radius * math.cos(a), radius * math.sin(a)) for a in np.atleast_1d(ang)]


@dataclass
class MultiCable:
    """Internal cables translated inside a Robin-cooled multi-cable."""

    centers: list = field(default_factory=lambda: regular_positions(3, 0.45, angles_deg=[90.0, 200.0, 320.0]))
    R: float = 1.2
    r_met: float = 0.2
    insulation: float = 0.055      # None: bare metal core
    r_halo: float = 0.33
    h: float = 0.02                # target cell size everywhere
    reaction: float = 0.04
    t_ex: float = 3.2
    q: float = 3.0
    conductivity: dict = None
    source: dict = None
    params: NitscheParams = field(default_factory=NitscheParams)
    flux: str = "residual"

    def __post_init__(self):
        if not self.h > 0 or not self.R > 0 or not self.centers:
            raise ConfigError("need h > 0, R > 0 and at least one cable")
        inner = self.r_met if self.r_iso is None else self.r_iso
        if not 0 < self.r_met <= inner < self.r_halo:
            raise ConfigError("cable radii must satisfy 0 < r_met < r_iso < r_halo")
        self.spec = cable_spec(self.reaction, self.t_ex, self.q, self.conductivity, self.source)
        n_bg = self.bg_resolution
        # the background is a polygon: keep footprints inside its inscribed circle
        self.r_max = self.R * math.cos(math.pi / n_bg) - self.r_halo
        if self.r_max <= 0:
            raise ConfigError("halo too large for the multi-cable")
        self.designs = [Translation(i, self.r_max, tuple(c)) for i, c in enumerate(self.centers)]

    @property
    def r_iso(self):
        return None if self.insulation is None else self.r_met + self.insulation

    @property
    def bg_resolution(self):
        return max(16, int(round(2 * math.pi * self.R / self.h)))

    def background(self):
        return gen_disk((0.0, 0.0), self.R, self.bg_resolution)

    def submeshes(self):
        res = max(16, int(round(2 * math.pi * self.r_halo / self.h)))
        return [gen_cable_submesh(tuple(c), self.r_met, self.r_iso, self.r_halo, res) for c in self.centers]

    def stack(self):
        return build_stack(self.background(), self.submeshes())

    def solve(self, stack):
        return solve_state(stack, self.spec, self.params)

    def densities(self, stack, sol):
        solve_adjoint(sol)
        return [density_multicable(sol, i, flux=self.flux) for i in range(len(self.centers))]

    def current_centers(self, stack):
        return [np.asarray(c) + np.asarray(stack.poses[i].translation) for i, c in enumerate(self.centers)]

    def design_params(self, stack):
        out = {}
        for i, c in enumerate(self.current_centers(stack)):
            out[f"x{i}"] = float(c[0])
            out[f"y{i}"] = float(c[1])
        return out


def pairwise_center_angles(centers):
    """Interior angles of the triangle formed by three centers (degrees)."""
    c = [np.asarray(x, dtype=float) for x in centers]
    if len(c) != 3:
        raise ValueError("need exactly three centers")
    out = []
    for i in range(3):
        u = c[(i + 1) % 3] - c[i]
        v = c[(i + 2) % 3] - c[i]
        out.append(math.degrees(math.acos(np.clip(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)), -1, 1))))
    return out


# ---------------------------------------------------------------- geometric toy


@dataclass
class GeoSolution:
    J: float
    values: object
    density: GradientDensity


@dataclass
class GeometricToy:
    """Obstacle driven towards a target area and centroid by quadratic penalties only."""

    n: int = 32
    n_t: int = 96
    r0: float = 0.15
    hole_offset: tuple = (-0.04, 0.03)
    r_sub: float = 0.34
    target_area: float = 0.05
    target_centroid: tuple = (0.5, 0.5)
    gamma1: float = 1e3
    gamma2: float = 1e3
    scheme: object = field(default_factory=EikonalAdvect)

    def __post_init__(self):
        if self.n < 2 or self.n_t < 16 or not 0 < self.r0 < self.r_sub:
            raise ConfigError("invalid toy geometry or resolution")
        if not self.target_area > 0:
            raise ConfigError("target area must be positive")
        self.designs = [BoundaryNodes(0, self.scheme, GAMMA)]

    def stack(self):
        bg = gen_rect_grid(0.0, 0.0, 1.0, 1.0, self.n, self.n)
        sub = gen_ellipse_annulus((0.5, 0.5), self.r0, self.r0, self.r_sub, max(2, self.n_t // 12),
                                  self.n_t, hole_offset=self.hole_offset)
        return build_stack(bg, [sub])

    def solve(self, stack):
        mesh = stack.submeshes[0]
        loop = [lp for lp in boundary_loops(mesh) if np.all(lp.markers == GAMMA)]
        if len(loop) != 1:
            raise ConfigError("obstacle boundary must be a single closed loop")
        ids = loop[0].vertices[::-1]           # hole loops run clockwise; make it CCW
        vals, dens = geometric_functionals(mesh.vertices[ids], self.target_area, self.target_centroid,
                                           self.gamma1, self.gamma2, 1.0)
        # attach the density to the submesh facets it lives on
        dens.vertex_ids = np.column_stack([ids, np.roll(ids, -1)])
        dens.mesh_index = 0
        return GeoSolution(vals.total, vals, dens)

    def densities(self, stack, sol):
        return [sol.density]

    def design_params(self, stack):
        v = self.solve(stack).values
        return {"obstacle_area": v.obstacle_area, "cx": v.centroid[0], "cy": v.centroid[1]}


# ---------------------------------------------------------------- Taylor drivers


def descent_taylor(problem, stack, eps=None, normalize=True):
    """Taylor test along the (normalized) steepest-descent direction of ``problem`` at ``stack``."""
    sol = problem.solve(stack)
    dens = problem.densities(stack, sol)
    dirs = [representer(stack, d, g) for d, g in zip(problem.designs, dens)]
    if normalize:
        scale = math.sqrt(sum(float(np.sum(np.square(_raw(v)))) for v in dirs))
        if scale == 0:
            raise ConfigError("zero gradient: no descent direction to test")
        dirs = [_scaled(v, 1.0 / scale) for v in dirs]
    dj = sum(slope(d, g, v, stack) for d, g, v in zip(problem.designs, dens, dirs))
    from .optim import _trial_stack

    def evaluate(e):
        return problem.solve(_trial_stack(stack, problem.designs, dirs, e)).J

    return taylor_test(evaluate, sol.J, dj, eps)


def _raw(v):
    return getattr(v, "values", v)


def _scaled(v, c):
    if hasattr(v, "values"):
        return type(v)(v.index, v.values * c)
    return np.asarray(v, dtype=float) * c if np.ndim(v) else float(v) * c


# ---------------------------------------------------------------- manufactured solutions


def mms_exact(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def mms_source(x, y):
    return 2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)


def square_patch(n, side=0.4, center=(0.5, 0.5), angle=0.35, ratio=1.15):
    """Unit-square background with a rotated square patch (outer boundary is interface)."""
    bg = gen_rect_grid(0.0, 0.0, 1.0, 1.0, n, n)
    m = max(2, int(math.ceil(ratio * side * n)))
    x0, y0 = center[0] - side / 2, center[1] - side / 2
    sq = gen_rect_grid(x0, y0, x0 + side, y0 + side, m, m)
    patch = Mesh(sq.vertices, sq.cells, None, sq.facets, np.full(len(sq.facets), LAMBDA))
    return bg, patch, RigidPose(angle, tuple(center))


def mms_spec():
    return ProblemSpec(conductivity={FILL: 1.0}, source=mms_source, reaction=0.0,
                       bcs={EXTERIOR: Dirichlet(0.0)}, functional="l2sq")


def convergence_study(levels=3, n0=16, multimesh=True, params=NitscheParams(), exact=mms_exact):
    """L2 errors of the sin-sin manufactured problem on n0 * 2^k meshes, k = 0..levels."""
    if levels < 1 or n0 < 2:
        raise ConfigError("need at least one refinement and n0 >= 2")
    rows = []
    for k in range(levels + 1):
        n = n0 * 2**k
        if multimesh:
            bg, patch, pose = square_patch(n)
            stack = build_stack(bg, [patch], [pose])
            sol = solve_state(stack, mms_spec(), params)
            err = mm_l2_error(stack, sol.T, exact)
        else:
            bg = gen_rect_grid(0.0, 0.0, 1.0, 1.0, n, n)
            u = solve_poisson(bg, mms_source, 0.0, (EXTERIOR,))
            err = fem_l2_error(bg, u, exact)
        rate = math.log2(rows[-1]["l2_error"] / err) if rows else float("nan")
        rows.append({"n": n, "h": 1.0 / n, "l2_error": err, "rate": rate})
    return rows
