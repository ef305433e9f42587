"""Command line: mmshape <solve|optimize|taylor|sweep|convergence> --config FILE."""
import argparse
import logging
import math
import os
import sys
import time

import numpy as np

from . import io
from .config import build_problem, parse_config
from .errors import ConfigError, GeometryError, LineSearchError, MeshError, SolverError
from .mesh import write_mesh
from .optim import steepest_descent
from .problems import ExampleRotation, convergence_study, descent_taylor

log = logging.getLogger("mmshape")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _initial_stack(cfg, problem):
    if isinstance(problem, ExampleRotation):
        return problem.stack(math.radians(cfg.get("problem", "theta0", 0.0)))
    return problem.stack()


def _write_fields(stack, sol, out, prefix, enabled=True):
    """One VTK per mesh with the state restricted to that mesh's dofs."""
    if not enabled:
        return []
    files = []
    T = getattr(sol, "T", None)
    for i, mesh in enumerate(stack.meshes):
        fields = {}
        if T is not None:
            fields["T"] = T[stack.offsets[i]:stack.offsets[i + 1]]
        name = "background" if i == 0 else f"submesh{i - 1}"
        files.append(io.write_vtk(mesh, fields, os.path.join(out, f"{prefix}_{name}.vtk")))
    return files


def _summary(out, command, cfg, t0, files, **extra):
    data = {"command": command, "problem": cfg.problem, "config": cfg.source,
            "wall_time": time.perf_counter() - t0, "files": files}
    data.update(extra)
    path = os.path.join(out, "summary.json")
    io.write_json(data, path)
    return path


def _design_summary(problem, stack):
    d = {k: float(v) for k, v in problem.design_params(stack).items()}
    if "theta_deg" in d:
        d["theta_deg_mod360"] = d["theta_deg"] % 360.0
    return d


def cmd_solve(cfg, args):
    t0 = time.perf_counter()
    problem = build_problem(cfg)
    stack = _initial_stack(cfg, problem)
    sol = problem.solve(stack)
    files = _write_fields(stack, sol, args.out, "state", cfg.vtk)
    return _summary(args.out, "solve", cfg, t0, files, J=float(sol.J), design=_design_summary(problem, stack))


def cmd_optimize(cfg, args):
    t0 = time.perf_counter()
    problem = build_problem(cfg)
    stack = _initial_stack(cfg, problem)
    hist = steepest_descent(problem, stack, cfg.optimizer)
    files = [hist.write_csv(os.path.join(args.out, "history.csv"))]
    final = hist.final_stack
    if final is not None:
        sol = hist.final_solution or problem.solve(final)
        files += _write_fields(final, sol, args.out, "final", cfg.vtk)
        for i, m in enumerate(final.submeshes):
            path = os.path.join(args.out, f"final_submesh{i}.mesh")
            write_mesh(m, path)
            files.append(path)
    J = hist.J
    summary = _summary(args.out, "optimize", cfg, t0, files, status=hist.status, message=hist.message,
                       J0=float(J[0]) if len(J) else None, J=float(J[-1]) if len(J) else None,
                       iterations=hist.iterations, evaluations=hist.evaluations,
                       design=_design_summary(problem, final) if final is not None else {})
    if hist.status == "error":
        raise SolverError(hist.message)
    return summary


def cmd_taylor(cfg, args):
    t0 = time.perf_counter()
    problem = build_problem(cfg)
    stack = _initial_stack(cfg, problem)
    rep = descent_taylor(problem, stack, args.eps)
    path = os.path.join(args.out, "taylor.csv")
    rep.write_csv(path)
    summary = _summary(args.out, "taylor", cfg, t0, [path], J=float(rep.j0), dJ=float(rep.dj),
                       rates0=rep.rates0.tolist(), rates1=rep.rates1.tolist(),
                       fitted_rate0=rep.fitted_rate0, fitted_rate1=rep.fitted_rate1, error=rep.error)
    if rep.error:
        raise SolverError(rep.error)
    return summary


def cmd_sweep(cfg, args):
    t0 = time.perf_counter()
    problem = build_problem(cfg)
    if not isinstance(problem, ExampleRotation):
        raise ConfigError("sweep is only defined for example_rotation")
    if args.steps < 1 or not args.to > getattr(args, "from"):
        raise ConfigError("sweep needs --steps >= 1 and --to > --from")
    thetas = np.linspace(getattr(args, "from"), args.to, args.steps, endpoint=False)
    J = problem.sweep(np.radians(thetas))
    path = io.write_csv([{"theta_deg": float(t), "J": float(j)} for t, j in zip(thetas, J)],
                        os.path.join(args.out, "sweep.csv"))
    k = int(np.argmin(J))
    return _summary(args.out, "sweep", cfg, t0, [path], theta_min_deg=float(thetas[k]), J_min=float(J[k]))


def cmd_convergence(cfg, args):
    t0 = time.perf_counter()
    rows = convergence_study(args.levels, multimesh=not args.single)
    path = io.write_csv(rows, os.path.join(args.out, "convergence.csv"))
    return _summary(args.out, "convergence", cfg, t0, [path], rates=[r["rate"] for r in rows[1:]])


COMMANDS = {"solve": cmd_solve, "optimize": cmd_optimize, "taylor": cmd_taylor, "sweep": cmd_sweep,
            "convergence": cmd_convergence}


def _eps_list(s):
    try:
        vals = [float(t) for t in s.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if len(vals) < 2:
        raise argparse.ArgumentTypeError("need at least two eps values")
    return vals


def build_parser():
    p = argparse.ArgumentParser(prog="mmshape", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    p.add_argument("--levels", type=int, default=3, help="refinements for convergence")
    p.add_argument("--single", action="store_true", help="convergence on a single mesh")
    p.add_argument("--eps", type=_eps_list, default=None, help="Taylor step sizes, decreasing")
    p.add_argument("--from", type=float, default=0.0, help="sweep start angle (deg)")
    p.add_argument("--to", type=float, default=360.0, help="sweep end angle (deg, excluded)")
    p.add_argument("--steps", type=int, default=72, help="sweep samples")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        args.out = args.out or cfg.out_dir
        os.makedirs(args.out, exist_ok=True)
        summary = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"mmshape: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GeometryError, MeshError, SolverError, LineSearchError, FloatingPointError) as exc:
        print(f"mmshape: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
