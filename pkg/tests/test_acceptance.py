"""Acceptance criteria, each run at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion still reports its measured values.
"""
import json
import math
import time

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.spatial import ConvexHull
from shapely.geometry import Polygon
from shapely.ops import unary_union

from conftest import ACCEPTANCE
from mmshape import io
from mmshape.cli import main
from mmshape.cutgeom import partition_report
from mmshape.errors import OverlapError
from mmshape.mesh import RigidPose, apply_rigid, gen_cable_submesh, gen_ellipse_annulus, radius_ratios
from mmshape.mmassembly import (Dirichlet, NitscheParams, ProblemSpec, _visible_quadrature, build_stack,
                                rebuild, solve_state)
from mmshape.mesh import EXTERIOR, FILL
from mmshape.optim import OptimizerOptions, steepest_descent
from mmshape.problems import (ExampleRotation, MultiCable, convergence_study, descent_taylor,
                              pairwise_center_angles, square_patch)
from mmshape.quadrature import polygon_quadrature
from mmshape.shape import directional_derivative, geometric_functionals, polygon_centroid, rotation_field


def record(num, title, ok, detail, t0):
    line = f"C{num} {'PASS' if ok else 'FAIL'} {title}: {detail} [{time.perf_counter() - t0:.1f} s]"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def test_c01_single_mesh_convergence():
    t0 = time.perf_counter()
    rows = convergence_study(levels=3, n0=16, multimesh=False)
    rates = [r["rate"] for r in rows[1:]]
    elapsed = time.perf_counter() - t0
    ok = all(abs(r - 2.0) <= 0.15 for r in rates) and elapsed < 60
    assert record(1, "single-mesh L2 rate 2.0+-0.15", ok, f"rates {np.round(rates, 3).tolist()}", t0)


def test_c02_linear_reproduction():
    t0 = time.perf_counter()
    lin = lambda x, y: 0.3 - 1.7 * x + 2.2 * y
    spec = ProblemSpec(conductivity={FILL: 1.0}, source=lambda x, y: 0.0 * x, bcs={EXTERIOR: Dirichlet(lin)})
    worst = 0.0
    for n in (8, 16, 32):
        bg, patch, pose = square_patch(n)
        stack = build_stack(bg, [patch], [pose])
        sol = solve_state(stack, spec, NitscheParams(4.0, 4.0))
        for i, m in enumerate(stack.meshes):
            act = stack.block(stack.active, i)
            worst = max(worst, float(np.abs(stack.block(sol.T, i) - lin(*m.vertices.T))[act].max()))
    assert record(2, "linear field reproduced, max nodal error <= 1e-8", worst <= 1e-8, f"max error {worst:.2e}", t0)


def test_c03_multimesh_convergence():
    t0 = time.perf_counter()
    rows = convergence_study(levels=3, n0=16, multimesh=True)
    rates = [r["rate"] for r in rows[1:]]
    ok = all(abs(r - 2.0) <= 0.2 for r in rates)
    assert record(3, "multimesh L2 rate 2.0+-0.2", ok, f"rates {np.round(rates, 3).tolist()}", t0)


def test_c04_taylor_rates():
    t0 = time.perf_counter()
    out = {}
    rot_fine = ExampleRotation(n=128, n_t=768)
    rot_coarse = ExampleRotation(n=32, n_t=192)
    out["rotation"] = [descent_taylor(p, p.stack(0.6)) for p in (rot_fine, rot_coarse)]
    cab = [MultiCable(centers=[(0.3, 0.2)], h=h, r_halo=0.45) for h in (0.015, 0.06)]
    out["cable"] = [descent_taylor(p, p.stack()) for p in cab]
    elapsed = time.perf_counter() - t0
    ok = elapsed < 300
    parts = []
    for name, (fine, coarse) in out.items():
        dev_f = float(np.abs(fine.rates1 - 2).max())
        dev_c = float(np.abs(coarse.rates1 - 2).max()) if len(coarse.rates1) else math.inf
        good = fine.error is None and abs(fine.fitted_rate1 - 2) <= 0.1 and (dev_c > dev_f or coarse.error)
        ok &= bool(good)
        parts.append(f"{name} fine fit {fine.fitted_rate1:.3f} rates {np.round(fine.rates1, 3).tolist()}, "
                     f"coarse rates {np.round(coarse.rates1, 3).tolist()}")
    assert record(4, "Taylor second-order rate 2.0+-0.1, degraded when 4x coarser", ok, "; ".join(parts), t0)


def _angle_diff(a, b):
    return abs((a - b + 180.0) % 360.0 - 180.0)


def test_c05_rotation_optimum(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "rot.ini"
    cfg.write_text("[problem]\nname = example_rotation\ntheta0 = 0\n[optimizer]\ntol = 1e-6\n[output]\nvtk = no\n")
    assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path / "opt")]) == 0
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "sweep")]) == 0
    s = json.load(open(tmp_path / "opt" / "summary.json"))
    theta = s["design"]["theta_deg_mod360"]
    rows = io.read_csv(tmp_path / "sweep" / "sweep.csv")
    sweep_min = min(rows, key=lambda r: r["J"])["theta_deg"]
    ok_loc = _angle_diff(theta, 296.6) <= 10.0
    ok_iter = s["status"] == "converged" and s["iterations"] <= 15
    ok_sweep = _angle_diff(theta, sweep_min) <= 15.0
    detail = (f"final theta {theta:.2f} deg (target 296.6+-10: {'ok' if ok_loc else 'off'}), "
              f"{s['iterations']} iterations / {s['evaluations']} evaluations ({s['status']}), "
              f"sweep minimum {sweep_min:.1f} deg ({'agrees' if ok_sweep else 'disagrees'})")
    assert record(5, "rotation optimum", ok_loc and ok_iter and ok_sweep, detail, t0)


def test_c06_three_cable_equilateral():
    t0 = time.perf_counter()
    pr = MultiCable()
    hist = steepest_descent(pr, pr.stack(), OptimizerOptions())
    centers = pr.current_centers(hist.final_stack)
    angles = pairwise_center_angles(centers)
    J = hist.J
    ratio = J[0] / J[-1]
    inside = all(np.linalg.norm(c) <= pr.r_max + 1e-12 for c in centers)
    elapsed = time.perf_counter() - t0
    ok = all(abs(a - 60.0) <= 5.0 for a in angles) and ratio >= 5.0 and elapsed < 1800 and inside
    detail = (f"angles {np.round(angles, 2).tolist()}, J {J[0]:.4g} -> {J[-1]:.4g} ({ratio:.2f}x), "
              f"{hist.iterations} iterations ({hist.status})")
    assert record(6, "three cables form an equilateral triangle", ok, detail, t0)


def test_c07_rigid_motion_quality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    meshes = [gen_cable_submesh((0.2, -0.1), 0.2, 0.255, 0.33, 60),
              gen_ellipse_annulus((1.0, 0.5), 0.2, 0.08, 0.42, 10, 128, hole_offset=(0.12, 0.0))]
    worst = 0.0
    for m in meshes:
        q0 = radius_ratios(m)
        for _ in range(50):
            pose = RigidPose(rng.uniform(-10, 10), tuple(rng.uniform(-1, 1, 2)), tuple(rng.uniform(-1, 1, 2)))
            worst = max(worst, float(np.abs(radius_ratios(apply_rigid(m, pose)) - q0).max()))
    # and through the optimizer's update path
    pr = ExampleRotation(n=16, n_t=128)
    stack = pr.stack()
    q0 = radius_ratios(stack.submeshes[0])
    for th in rng.uniform(0, 2 * np.pi, 10):
        worst = max(worst, float(np.abs(radius_ratios(pr.at(stack, th).submeshes[0]) - q0).max()))
    assert record(7, "radius ratios unchanged by rigid updates (<= 1e-12)", worst <= 1e-12,
                  f"max change {worst:.2e}", t0)


def _partition_errors(stack):
    """Area identity from independent pieces, plus the hidden+covered area against shapely."""
    bg = stack.background
    total = float(bg.areas.sum())
    visible = sum(float(W.sum()) for i, _, _, _, W in _visible_quadrature(stack) if i == 0)
    _, hidden, covered = partition_report(bg, stack.cls)
    domain = Polygon(bg.vertices[_outer_loop(bg)])
    feet = [Polygon(m.vertices[_outer_loop(m)]) for m in stack.submeshes]
    under = unary_union(feet).intersection(domain).area
    return abs(visible + hidden + covered - total) / total, abs(hidden + covered - under) / total


def _outer_loop(mesh):
    from mmshape.mesh import boundary_loops
    loops = boundary_loops(mesh)
    return max(loops, key=lambda lp: abs(Polygon(mesh.vertices[lp.vertices]).area)).vertices


def test_c08_geometry_partition():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    worst_sum = worst_shapely = 0.0
    pr = ExampleRotation(n=32, n_t=128)
    base = pr.stack()
    cab = MultiCable(h=0.04)
    cstack = cab.stack()
    stacks = [base, cstack]
    for _ in range(100):
        pose = RigidPose(rng.uniform(0, 2 * np.pi), pr.p, tuple(rng.uniform(-0.05, 0.05, 2)))
        stacks.append(rebuild(base, poses=[pose]))
    rejected = 0
    for _ in range(10):
        poses = [RigidPose(rng.uniform(0, 2 * np.pi), tuple(c), tuple(rng.uniform(-0.04, 0.04, 2)))
                 for c in cab.centers]
        try:
            stacks.append(rebuild(cstack, poses=poses))
        except OverlapError:        # footprints sharing a background cell are refused up front
            rejected += 1
    for st in stacks:
        e1, e2 = _partition_errors(st)
        worst_sum, worst_shapely = max(worst_sum, e1), max(worst_shapely, e2)
    ok = worst_sum <= 1e-10 and worst_shapely <= 1e-10
    assert record(8, "visible + hidden + covered = total (1e-10), 110 random rigid updates", ok,
                  f"{len(stacks)} stacks ({rejected} refused as too close), identity {worst_sum:.1e}, "
                  f"hidden+covered vs polygon overlay {worst_shapely:.1e}", t0)


def test_c09_gradient_vs_finite_differences():
    t0 = time.perf_counter()
    # geometric penalties on a fine polygon
    th = 2 * np.pi * np.arange(2000) / 2000
    pts = np.column_stack([0.45 + 0.15 * np.cos(th), 0.55 + 0.12 * np.sin(th)])
    geo_worst = 0.0
    fields = [lambda x: np.tile([1.0, 0.0], (len(x), 1)), lambda x: np.tile([0.0, 1.0], (len(x), 1)),
              lambda x: x - [0.45, 0.55], lambda x: np.column_stack([x[:, 1] ** 2, np.sin(3 * x[:, 0])])]
    A, cx, cy = polygon_centroid(pts)
    # each penalty alone: the other centroid coordinate sits at its target
    cases = {"V": (1e3, 0.0, (cx, cy)), "Cx": (0.0, 1e3, (0.5, cy)), "Cy": (0.0, 1e3, (cx, 0.5))}
    for which, (g1, g2, tc) in cases.items():
        _, dens = geometric_functionals(pts, 0.05, tc, g1, g2, 1.0)
        J = lambda loop: getattr(geometric_functionals(loop, 0.05, tc, g1, g2, 1.0)[0], "J_" + which)
        for s in fields:
            h = 1e-6
            fd = (J(pts + h * s(pts)) - J(pts - h * s(pts))) / (2 * h)
            an = directional_derivative(dens, s)
            # directions that leave this penalty stationary are compared absolutely
            geo_worst = max(geo_worst, abs(an - fd) / max(abs(fd), 1e-2))
    # full PDE pipeline on fine meshes, eps = 1e-4
    e = 1e-4
    pde_worst = 0.0
    pr = ExampleRotation(n=128, n_t=768)
    st = pr.stack(0.6)
    sol = pr.solve(st)
    an = directional_derivative(pr.densities(st, sol)[0], rotation_field(st.poses[0].rotation_center))
    fd = (pr.solve(pr.at(st, 0.6 + e)).J - pr.solve(pr.at(st, 0.6 - e)).J) / (2 * e)
    pde_worst = max(pde_worst, abs(an - fd) / abs(fd))
    cab = MultiCable(centers=[(0.3, 0.2)], h=0.015)
    cs = cab.stack()
    dens = cab.densities(cs, cab.solve(cs))[0]
    for v in ((1.0, 0.0), (0.0, 1.0)):
        v = np.array(v)
        Jc = lambda t: cab.solve(rebuild(cs, poses=[cs.poses[0].translated(t * v)])).J
        fd = (Jc(e) - Jc(-e)) / (2 * e)
        pde_worst = max(pde_worst, abs(directional_derivative(dens, v) - fd) / abs(fd))
    ok = geo_worst <= 1e-4 and pde_worst <= 1e-2
    assert record(9, "densities vs central differences (geometric 1e-4, PDE 1e-2)", ok,
                  f"geometric {geo_worst:.1e}, PDE {pde_worst:.1e}", t0)


def _green_moment(poly, a, b):
    """int x^a y^b over a CCW polygon as a boundary integral of x^(a+1) y^b / (a+1) dy."""
    t, w = leggauss(12)
    t, w = 0.5 * (t + 1), 0.5 * w
    p = poly
    q = np.roll(p, -1, axis=0)
    x = p[:, None, 0] + t[None] * (q[:, None, 0] - p[:, None, 0])
    y = p[:, None, 1] + t[None] * (q[:, None, 1] - p[:, None, 1])
    dy = (q[:, 1] - p[:, 1])[:, None]
    return float(np.sum(w * x ** (a + 1) * y ** b * dy) / (a + 1))


def test_c10_quadrature_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    worst = 0.0
    for k in range(1000):
        pts = rng.uniform(-1, 1, size=(rng.integers(3, 15), 2)) * rng.uniform(0.05, 3, 2) + rng.uniform(-2, 2, 2)
        poly = pts[ConvexHull(pts).vertices]
        d = 1 + k % 6
        P, W = polygon_quadrature(poly, d)
        scale = float(np.abs(P).max())
        for a in range(d + 1):
            for b in range(d + 1 - a):
                exact = _green_moment(poly, a, b)
                # relative to the integral of |x|^a |y|^b bound, so near-zero moments stay meaningful
                ref = max(abs(exact), float(W.sum()) * scale ** (a + b))
                worst = max(worst, abs(np.sum(W * P[:, 0] ** a * P[:, 1] ** b) - exact) / ref)
    assert record(10, "polygon quadrature exact to degree d (1000 convex polygons)", worst <= 1e-12,
                  f"max relative error {worst:.1e}", t0)
