import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmshape.deform import (BoundaryNodes, DeformField, EikonalAdvect, H1, Rotation, Translation,
                            apply_design_update, h1_energy, h1_riesz, representer, riesz_rotation,
                            riesz_translation, slope, solve_advection_deform, solve_eikonal)
from mmshape.errors import ConfigError, InvalidStepError, SolverError
from mmshape.mesh import GAMMA, RigidPose, gen_ellipse_annulus
from mmshape.problems import ExampleRotation, GeometricToy
from mmshape.shape import directional_derivative


@pytest.fixture(scope="module")
def toy():
    pr = GeometricToy(n=16, n_t=96)
    stack = pr.stack()
    sol = pr.solve(stack)
    return pr, stack, sol.density


def test_eikonal_approximates_distance():
    r0 = 0.15
    m = gen_ellipse_annulus((0.0, 0.0), r0, r0, 0.4, 12, 128)
    e = solve_eikonal(m, GAMMA, alpha1=1e-3)
    r = np.linalg.norm(m.vertices, axis=1)
    assert np.all(np.abs(e[m.marker_vertices(GAMMA)]) == 0)
    assert np.max(np.abs(e - (r - r0))) < 0.02


def test_eikonal_smoothing_keeps_monotone_profile():
    m = gen_ellipse_annulus((0.0, 0.0), 0.15, 0.15, 0.4, 12, 96)
    e = solve_eikonal(m, GAMMA, alpha1=25.0)
    r = np.linalg.norm(m.vertices, axis=1)
    assert e.min() >= -1e-12
    rings = np.round(r, 6)
    means = [e[rings == v].mean() for v in np.unique(rings)]
    assert np.all(np.diff(means) > 0)


def test_eikonal_bad_input():
    m = gen_ellipse_annulus((0.0, 0.0), 0.15, 0.15, 0.4, 4, 32)
    with pytest.raises(ConfigError):
        solve_eikonal(m, GAMMA, alpha1=0.0)
    with pytest.raises(ConfigError):
        solve_eikonal(m, marker=99)


def test_h1_riesz_identity(toy):
    pr, stack, dens = toy
    mesh = stack.submeshes[0]
    for alpha in (0.0, 1e-3, 1e-1):
        d = h1_riesz(mesh, dens, alpha)
        dj = directional_derivative(dens, d.values)
        assert dj < 0
        assert dj == pytest.approx(-h1_energy(mesh, d.values, alpha), rel=1e-10)


def test_advection_deformation_matches_boundary_data(toy):
    pr, stack, dens = toy
    mesh = stack.submeshes[0]
    eps = solve_eikonal(mesh, GAMMA, 25.0)
    d = solve_advection_deform(mesh, eps, dens, 1e-3)
    ids = np.unique(dens.vertex_ids)
    # boundary values are length-weighted averages of -g n
    gn = -(dens.values[:, None] * dens.normals)
    assert np.all(np.linalg.norm(d.values[ids], axis=1) <= np.abs(gn).max() * 1.5 + 1e-14)
    assert directional_derivative(dens, d.values) < 0
    # decays away from the obstacle
    far = np.linalg.norm(mesh.vertices - mesh.vertices[ids].mean(axis=0), axis=1) > 0.3
    assert np.linalg.norm(d.values[far], axis=1).max() < np.linalg.norm(d.values[ids], axis=1).max()


def test_representer_dispatch_descends(toy):
    pr, stack, dens = toy
    for scheme in (H1(1e-3), EikonalAdvect()):
        design = BoundaryNodes(0, scheme)
        v = representer(stack, design, dens)
        assert isinstance(v, DeformField)
        assert slope(design, dens, v, stack) < 0


def test_rotation_representer_descends():
    pr = ExampleRotation(n=16, n_t=96)
    stack = pr.stack(0.6)
    sol = pr.solve(stack)
    dens = pr.densities(stack, sol)[0]
    design = pr.designs[0]
    w = representer(stack, design, dens)
    assert slope(design, dens, w, stack) < 0
    # alpha adds the gradient term to the denominator only
    w0 = riesz_rotation(dens, stack.submeshes[0], design.center, 0.0)
    assert abs(w0) > abs(w) and np.sign(w0) == np.sign(w)


def test_translation_representer_is_mean_force(toy):
    pr, stack, dens = toy
    mesh = stack.submeshes[0]
    d = riesz_translation(dens, mesh)
    assert slope(Translation(0), dens, d, stack) == pytest.approx(-mesh.areas.sum() * d @ d, rel=1e-12)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_rotation_updates_compose(a, b):
    pr = ExampleRotation(n=8, n_t=32)
    stack0 = pr.stack()
    # rotation poses compose additively
    p = RigidPose(0.0, pr.p).rotated(a).rotated(b)
    assert p.rotation_angle == pytest.approx(a + b)
    x = stack0.base_submeshes[0].vertices
    assert p.apply(x) == pytest.approx(RigidPose(a + b, pr.p).apply(x), abs=1e-12)


def test_apply_update_rotation_twice_equals_once():
    pr = ExampleRotation(n=8, n_t=32)
    stack = pr.stack()
    d = pr.designs[0]
    once = apply_design_update(stack, d, 0.4, 1.0)
    twice = apply_design_update(apply_design_update(stack, d, 0.2, 1.0), d, 0.2, 1.0)
    assert once.submeshes[0].vertices == pytest.approx(twice.submeshes[0].vertices, abs=1e-12)
    assert apply_design_update(stack, d, 0.4, 0.0) is stack


def test_boundary_update_moves_vertices(toy):
    pr, stack, dens = toy
    design = BoundaryNodes(0, H1(1e-3))
    v = representer(stack, design, dens)
    xi = 1e-3 / v.max_norm
    new = apply_design_update(stack, design, v, xi)
    moved = new.submeshes[0].vertices - stack.submeshes[0].vertices
    assert moved == pytest.approx(xi * v.values, abs=1e-14)
    assert stack.submeshes[0].vertices is not new.submeshes[0].vertices


def test_invalid_step_rejected(toy):
    pr, stack, dens = toy
    design = BoundaryNodes(0, H1(1e-3))
    v = representer(stack, design, dens)
    big = 10.0 / v.max_norm
    with pytest.raises(InvalidStepError):
        apply_design_update(stack, design, v, big)
    with pytest.raises(InvalidStepError):
        apply_design_update(stack, design, v, math.inf)


def test_design_validation():
    with pytest.raises(ConfigError):
        Rotation(alpha=-1.0)
    with pytest.raises(ConfigError):
        Translation(r_max=0.0)
    with pytest.raises(ConfigError):
        BoundaryNodes(0, H1(-1.0))
    with pytest.raises(ConfigError):
        BoundaryNodes(0, "spline")
    with pytest.raises(SolverError):
        DeformField(0, np.array([[np.nan, 0.0]]))
