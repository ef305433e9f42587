"""Steepest descent with Armijo backtracking, projection and penalty continuation."""
from dataclasses import dataclass, field
import logging
import math

import numpy as np

from .deform import Rotation, Translation, representer, slope, updated_poses, apply_design_update
from .io import read_csv, write_csv
from .errors import ConfigError, GeometryError, LineSearchError, MeshError, SolverError
from .mesh import RigidPose, mesh_quality
from .mmassembly import rebuild

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerOptions:
    c1: float = 1e-4
    factor: float = 0.5
    xi0: float = 1.0
    warm: float = 2.0
    max_backtracks: int = 30
    max_iter: int = 200
    tol: float = 1e-6

    def __post_init__(self):
        if not 0 < self.c1 < 1:
            raise ConfigError("c1 must lie in (0, 1)")
        if not 0 < self.factor < 1:
            raise ConfigError("backtrack factor must lie in (0, 1)")
        if not self.xi0 > 0 or not self.warm >= 1:
            raise ConfigError("xi0 must be positive and warm >= 1")
        if self.max_backtracks < 0 or self.max_iter < 0:
            raise ConfigError("iteration limits must be nonnegative")
        if not self.tol >= 0:
            raise ConfigError("tol must be nonnegative")


@dataclass
class ArmijoResult:
    xi: float
    J: float
    evals: int
    model: float       # predicted linear change at the accepted step
    payload: object = None


def armijo(eval_j, j0, slope_, opts=OptimizerOptions(), xi0=None, decrease=None):
    """Backtracking until J(xi) <= J0 + c1 * model(xi).

    ``eval_j(xi)`` returns J or (J, payload); geometry failures count as a
    rejected step.  ``model(xi)`` defaults to xi * slope; projected steps pass
    ``decrease`` giving the linear change of the actually taken step.
    """
    if not slope_ < 0:
        raise ValueError("armijo needs a descent direction (slope < 0)")
    xi = opts.xi0 if xi0 is None else xi0
    evals = 0
    for _ in range(opts.max_backtracks + 1):
        evals += 1
        try:
            out = eval_j(xi)
        except (GeometryError, MeshError, SolverError) as exc:
            log.debug("trial step %g rejected: %s", xi, exc)
            out = math.inf
        J, payload = out if isinstance(out, tuple) else (out, None)
        model = xi * slope_ if decrease is None else decrease(xi)
        if math.isfinite(J) and J <= j0 + opts.c1 * model:
            return ArmijoResult(xi, J, evals, model, payload)
        xi *= opts.factor
    raise LineSearchError(f"no sufficient decrease after {evals} trial steps", evaluations=evals)


# ---------------------------------------------------------------- projection


def project_center(c, r_max):
    """Radial projection of a point onto the disk of radius r_max about the origin."""
    c = np.asarray(c, dtype=float)
    r = float(np.linalg.norm(c))
    if r_max is None or r <= r_max:
        return c
    return c * (r_max / r)


def project_design(designs, poses):
    """Clip translated centers of constrained translation designs; rotations pass through."""
    poses = list(poses)
    for d in designs:
        if isinstance(d, Translation) and d.r_max is not None:
            pose = poses[d.index]
            c = np.asarray(d.center) + np.asarray(pose.translation)
            cp = project_center(c, d.r_max)
            t = cp - np.asarray(d.center)
            poses[d.index] = RigidPose(pose.rotation_angle, pose.rotation_center, (float(t[0]), float(t[1])))
    return poses


# ---------------------------------------------------------------- history


@dataclass
class History:
    rows: list = field(default_factory=list)
    status: str = "running"
    message: str = ""
    final_stack: object = field(default=None, repr=False)
    final_solution: object = field(default=None, repr=False)

    def append(self, **row):
        self.rows.append(row)

    @property
    def J(self):
        return np.array([r["J"] for r in self.rows])

    @property
    def iterations(self):
        return max(0, len(self.rows) - 1)

    @property
    def evaluations(self):
        return int(sum(r["evals"] for r in self.rows))

    def columns(self):
        cols = []
        for r in self.rows:
            for k in r:
                if k not in cols:
                    cols.append(k)
        return cols

    def write_csv(self, path):
        return write_csv(self.rows, path, self.columns())

    @classmethod
    def read_csv(cls, path):
        return cls(rows=read_csv(path))

    def extend(self, other, offset=0):
        for r in other.rows:
            r = dict(r)
            r["iteration"] = r["iteration"] + offset
            self.rows.append(r)


# ---------------------------------------------------------------- descent loop


def _min_quality(stack):
    return min([mesh_quality(m) for m in stack.submeshes] or [mesh_quality(stack.background)])


def _trial_stack(stack, designs, directions, xi):
    rigid = [(d, v) for d, v in zip(designs, directions) if isinstance(d, (Rotation, Translation))]
    if len(rigid) == len(designs):
        poses = updated_poses(stack, designs, directions, xi)
        return rebuild(stack, poses=project_design(designs, poses))
    new = apply_design_update(stack, list(designs), list(directions), xi)
    poses = project_design(designs, new.poses)
    return new if poses == list(new.poses) else rebuild(new, poses=poses)


def _taken_change(stack, designs, densities, directions, xi):
    """Linear change of J along the projected step (only differs from xi*slope when clipped)."""
    total = 0.0
    for d, g, v in zip(designs, densities, directions):
        if isinstance(d, Translation) and d.r_max is not None:
            pose = stack.poses[d.index]
            c = np.asarray(d.center) + np.asarray(pose.translation)
            step = project_center(c + xi * np.asarray(v), d.r_max) - c
            total += slope(d, g, step, stack)
        else:
            total += xi * slope(d, g, v, stack)
    return total


def steepest_descent(problem, stack, opts=OptimizerOptions(), callback=None):
    """Algorithm: state -> (adjoint) -> density -> representer -> Armijo step, repeated.

    ``problem`` provides ``designs``, ``solve(stack)`` (object with ``.J``),
    ``densities(stack, sol)`` and ``design_params(stack)``.  Returns a
    History; errors end the loop with status "error" and the partial history.
    """
    hist = History()
    designs = list(problem.designs)
    try:
        sol = problem.solve(stack)
    except (GeometryError, MeshError, SolverError) as exc:
        hist.status, hist.message = "error", f"initial solve failed: {exc}"
        return hist
    J = sol.J
    hist.append(iteration=0, J=J, slope=0.0, xi=0.0, model=0.0, evals=1,
                min_quality=_min_quality(stack), **problem.design_params(stack))
    xi0 = opts.xi0
    hist.final_stack = stack
    for k in range(1, opts.max_iter + 1):
        try:
            densities = problem.densities(stack, sol)
            directions = [representer(stack, d, g) for d, g in zip(designs, densities)]
            s = sum(slope(d, g, v, stack) for d, g, v in zip(designs, densities, directions))
        except (GeometryError, MeshError, SolverError) as exc:
            hist.status, hist.message = "error", f"gradient failed at iteration {k}: {exc}"
            break
        if not s < 0 or abs(s) <= 1e-14 * max(abs(J), 1e-300):
            hist.status, hist.message = "stationary", "zero gradient"
            hist.rows[-1]["slope"] = s
            break

        def trial(xi, stack=stack, directions=directions):
            st = _trial_stack(stack, designs, directions, xi)
            so = problem.solve(st)
            return so.J, (st, so)

        def decrease(xi, stack=stack, densities=densities, directions=directions):
            return _taken_change(stack, designs, densities, directions, xi)

        try:
            res = armijo(trial, J, s, opts, xi0, decrease)
        except LineSearchError as exc:
            hist.status, hist.message = "converged", f"no descent: {exc}"
            hist.rows[-1]["evals"] += exc.evaluations
            break
        stack, sol = res.payload
        J_old, J = J, res.J
        hist.append(iteration=k, J=J, slope=s, xi=res.xi, model=res.model, evals=res.evals,
                    min_quality=_min_quality(stack), **problem.design_params(stack))
        hist.final_stack = stack
        log.info("iter %d J=%.10g slope=%.3e xi=%.3e evals=%d", k, J, s, res.xi, res.evals)
        if callback is not None:
            callback(k, stack, sol)
        xi0 = opts.warm * res.xi
        if abs(J - J_old) <= opts.tol * abs(J):
            hist.status, hist.message = "converged", "relative reduction below tolerance"
            break
    else:
        hist.status, hist.message = "max_iter", "iteration limit reached"
    hist.final_solution = sol
    return hist


def penalty_continuation(make_problem, schedule, stack, opts=OptimizerOptions()):
    """Run steepest descent per penalty stage, warm-starting each from the last design.

    ``make_problem(params)`` builds the problem for one schedule entry.  Returns
    the list of per-stage histories.
    """
    if len(schedule) == 0:
        raise ConfigError("empty penalty schedule")
    vals = [np.atleast_1d(np.asarray(p, dtype=float)) for p in schedule]
    if any(np.any(b < a) for a, b in zip(vals[:-1], vals[1:])):
        raise ConfigError("penalty schedule must be nondecreasing")
    out = []
    for params in schedule:
        h = steepest_descent(make_problem(params), stack, opts)
        out.append(h)
        if h.status == "error":
            break
        stack = h.final_stack
    return out
