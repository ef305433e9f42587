import json
import os

import numpy as np
import pytest

from mmshape import io
from mmshape.cli import main
from mmshape.mesh import read_mesh

SMALL_ROT = "[meshes]\nn = 12\nn_t = 64\n[output]\nvtk = yes\n"
SMALL_TOY = "[problem]\nname = geometric_toy\n[meshes]\nn = 12\nn_t = 64\n[optimizer]\nmax_iter = 3\n"


def run(tmp_path, text, *args, name="run"):
    cfg = tmp_path / f"{name}.ini"
    cfg.write_text(text)
    out = tmp_path / name
    code = main([args[0], "--config", str(cfg), "--out", str(out), *args[1:]])
    summary = out / "summary.json"
    return code, (json.loads(summary.read_text()) if summary.exists() else None), out


def test_solve_writes_fields(tmp_path):
    code, s, out = run(tmp_path, SMALL_ROT, "solve")
    assert code == 0 and s["J"] > 0 and s["design"]["theta_deg"] == 0.0
    for f in s["files"]:
        v = io.read_vtk_summary(f)
        assert v["points"] > 0 and np.all(np.isfinite(v["scalars"]["T"]))


def test_solve_is_reproducible(tmp_path):
    _, a, out_a = run(tmp_path, SMALL_ROT, "solve", name="a")
    _, b, out_b = run(tmp_path, SMALL_ROT, "solve", name="b")
    assert a["J"] == b["J"]
    for fa, fb in zip(a["files"], b["files"]):
        assert open(fa, "rb").read() == open(fb, "rb").read()


def test_optimize_outputs(tmp_path):
    code, s, out = run(tmp_path, SMALL_TOY, "optimize")
    assert code == 0
    rows = io.read_csv(out / "history.csv")
    assert len(rows) == s["iterations"] + 1 and rows[-1]["J"] == s["J"]
    assert s["J"] < s["J0"]
    mesh = read_mesh(str(out / "final_submesh0.mesh"))
    assert mesh.num_cells > 0
    assert os.path.exists(out / "final_background.vtk")


def test_taylor_outputs(tmp_path):
    code, s, out = run(tmp_path, SMALL_ROT, "taylor", "--eps", "0.1,0.05,0.025")
    assert code == 0
    rows = io.read_csv(out / "taylor.csv")
    assert [r["eps"] for r in rows] == [0.1, 0.05, 0.025]
    assert s["dJ"] < 0


def test_sweep_outputs(tmp_path):
    code, s, out = run(tmp_path, SMALL_ROT, "sweep", "--steps", "8")
    assert code == 0
    rows = io.read_csv(out / "sweep.csv")
    assert [r["theta_deg"] for r in rows] == [0, 45, 90, 135, 180, 225, 270, 315]
    assert s["J_min"] == min(r["J"] for r in rows)


def test_convergence_outputs(tmp_path):
    code, s, out = run(tmp_path, "", "convergence", "--levels", "2", "--single")
    assert code == 0
    rows = io.read_csv(out / "convergence.csv")
    assert len(rows) == 3 and abs(rows[-1]["rate"] - 2) < 0.15


def test_config_error_exit_code(tmp_path, capsys):
    code, _, _ = run(tmp_path, "[nitsche]\nbeta0 = -1\n", "solve")
    assert code == 2
    assert "beta0" in capsys.readouterr().err
    code, _, _ = run(tmp_path, "[problem]\nname = multicable\n", "sweep", name="sw")
    assert code == 2


def test_numerical_failure_exit_code(tmp_path, capsys):
    text = "[problem]\nname = multicable\n[meshes]\nstart_radius = 0.1\nh = 0.05\n"
    code, _, _ = run(tmp_path, text, "solve")
    assert code == 3
    assert "overlap" in capsys.readouterr().err


def test_bad_arguments(tmp_path):
    with pytest.raises(SystemExit):
        main(["solve"])
    with pytest.raises(SystemExit):
        main(["taylor", "--config", "x.ini", "--eps", "0.1"])
