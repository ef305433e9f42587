
import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmshape.deform import Translation
from mmshape.errors import ConfigError, GeometryError, LineSearchError
from mmshape.mesh import RigidPose
from mmshape.optim import (History, OptimizerOptions, armijo, penalty_continuation, project_center,
                           project_design, steepest_descent)
from mmshape.problems import GeometricToy


def test_armijo_accepts_full_step():
    res = armijo(lambda xi: (1 - xi) ** 2, 1.0, -2.0)
    assert res.xi == 1.0 and res.evals == 1 and res.J == 0.0


def test_armijo_backtracks():
    # J = 1 - xi + 4 xi^2: sufficient decrease needs xi < 0.25
    res = armijo(lambda xi: 1 - xi + 4 * xi ** 2, 1.0, -1.0)
    assert res.xi == 0.125 and res.evals == 4
    assert res.J <= 1.0 + 1e-4 * res.model


def test_armijo_treats_geometry_failures_as_rejections():
    def f(xi):
        if xi > 0.3:
            raise GeometryError("inverted")
        return 1 - xi
    res = armijo(f, 1.0, -1.0)
    assert res.xi == 0.25 and res.evals == 3


def test_armijo_gives_up():
    opts = OptimizerOptions(max_backtracks=5)
    with pytest.raises(LineSearchError) as info:
        armijo(lambda xi: 2.0, 1.0, -1.0, opts)
    assert info.value.evaluations == 6
    with pytest.raises(ValueError):
        armijo(lambda xi: 0.0, 1.0, 0.0)


def test_armijo_payload_and_decrease_model():
    res = armijo(lambda xi: (1 - xi, "p"), 1.0, -1.0, decrease=lambda xi: -0.5 * xi)
    assert res.payload == "p" and res.model == -0.5


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 3))
def test_projection_properties(x, y, r):
    c = np.array([x, y])
    p = project_center(c, r)
    assert np.linalg.norm(p) <= r * (1 + 1e-12)
    assert project_center(p, r) == pytest.approx(p, abs=1e-12)
    if np.linalg.norm(c) <= r:
        assert np.all(p == c)
    else:
        # same direction as the input
        assert p @ c > 0 and abs(p[0] * c[1] - p[1] * c[0]) <= 1e-9 * np.linalg.norm(c) ** 2


def test_project_design_clips_translation():
    d = Translation(0, 0.5, (0.3, 0.0))
    poses = project_design([d], [RigidPose(0.0, (0.0, 0.0), (0.7, 0.0))])
    assert poses[0].translation == pytest.approx((0.2, 0.0))


def test_options_validation():
    for kw in ({"c1": 0.0}, {"factor": 1.0}, {"xi0": 0.0}, {"warm": 0.5}, {"max_iter": -1}, {"tol": -1.0}):
        with pytest.raises(ConfigError):
            OptimizerOptions(**kw)


def test_history_csv_roundtrip(tmp_path):
    h = History()
    h.append(iteration=0, J=1.0 / 3.0, slope=0.0, xi=0.0, model=0.0, evals=1, theta_deg=12.5)
    h.append(iteration=1, J=0.1, slope=-2.0, xi=0.5, model=-1.0, evals=2, theta_deg=13.0)
    p = h.write_csv(tmp_path / "h.csv")
    back = History.read_csv(p)
    assert back.rows == h.rows
    assert back.J.tolist() == [1.0 / 3.0, 0.1]
    assert h.iterations == 1 and h.evaluations == 3


def test_history_extend_offsets_iterations():
    a, b = History(), History()
    a.append(iteration=0, J=1.0, evals=1)
    b.append(iteration=0, J=0.5, evals=1)
    b.append(iteration=1, J=0.4, evals=1)
    a.extend(b, offset=1)
    assert [r["iteration"] for r in a.rows] == [0, 1, 2]


def test_penalty_schedule_validation():
    with pytest.raises(ConfigError):
        penalty_continuation(lambda p: None, [], None)
    with pytest.raises(ConfigError):
        penalty_continuation(lambda p: None, [10.0, 1.0], None)


@pytest.fixture(scope="module")
def toy_run():
    pr = GeometricToy(n=16, n_t=96)
    return pr, steepest_descent(pr, pr.stack(), OptimizerOptions(max_iter=8))


def test_descent_is_monotone(toy_run):
    pr, hist = toy_run
    J = hist.J
    assert len(J) > 2
    assert np.all(np.diff(J) < 0)
    assert hist.status in ("converged", "max_iter")
    for r in hist.rows[1:]:
        assert r["J"] <= hist.rows[r["iteration"] - 1]["J"] + 1e-4 * r["model"]


def test_penalty_continuation_warm_starts():
    def make(g):
        return GeometricToy(n=16, n_t=96, gamma1=g, gamma2=g)
    base = make(1.0)
    hs = penalty_continuation(make, [10.0, 100.0], base.stack(), OptimizerOptions(max_iter=3))
    assert len(hs) == 2
    assert hs[1].rows[0]["obstacle_area"] == pytest.approx(hs[0].rows[-1]["obstacle_area"], rel=1e-12)


def test_descent_reports_initial_failure():
    class Broken:
        designs = []

        def solve(self, stack):
            raise GeometryError("no geometry")

    hist = steepest_descent(Broken(), None)
    assert hist.status == "error" and "no geometry" in hist.message


def test_armijo_hand_example():
    # J(x) = x^2 at x = 1 along direction -2: slope -4
    res = armijo(lambda xi: (1 - 2 * xi) ** 2, 1.0, -4.0)
    assert res.xi == 0.5 and res.evals == 2 and res.J == 0.0


def test_stationary_start_stops_at_once():
    pr = GeometricToy(n=12, n_t=64)
    v = pr.solve(pr.stack()).values
    at_target = GeometricToy(n=12, n_t=64, target_area=v.obstacle_area, target_centroid=v.centroid)
    hist = steepest_descent(at_target, at_target.stack())
    assert hist.status == "stationary" and hist.iterations == 0 and hist.evaluations == 1


def test_descent_is_deterministic():
    pr = GeometricToy(n=12, n_t=64)
    a = steepest_descent(pr, pr.stack(), OptimizerOptions(max_iter=3))
    b = steepest_descent(pr, pr.stack(), OptimizerOptions(max_iter=3))
    assert a.rows == b.rows
