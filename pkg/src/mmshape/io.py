"""Legacy ASCII VTK and CSV writers."""
import csv
import json

import numpy as np

VTK_TRIANGLE = 5


def write_vtk(mesh, fields, path, title="mmshape"):
    """Write a triangle mesh with nodal fields as a legacy UNSTRUCTURED_GRID.

    ``fields`` maps names to arrays of shape (nv,) (scalars) or (nv, 2) (vectors,
    padded with a zero z component).  Region tags go out as CELL_DATA.
    """
    x = mesh.vertices
    nv, nc = len(x), len(mesh.cells)
    checked = {}
    for name, v in (fields or {}).items():
        v = np.asarray(v, dtype=float)
        if v.shape[0] != nv or v.ndim > 2 or (v.ndim == 2 and v.shape[1] != 2):
            raise ValueError(f"field {name!r} has shape {v.shape}, expected ({nv},) or ({nv}, 2)")
        checked[name.replace(" ", "_")] = v
    lines = ["# vtk DataFile Version 2.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {nv} double"]
    lines += [f"{a!r} {b!r} 0.0" for a, b in x.tolist()]
    lines.append(f"CELLS {nc} {4 * nc}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.cells.tolist()]
    lines.append(f"CELL_TYPES {nc}")
    lines += [str(VTK_TRIANGLE)] * nc
    lines += [f"CELL_DATA {nc}", "SCALARS region int 1", "LOOKUP_TABLE default"]
    lines += [str(r) for r in mesh.cell_region.tolist()]
    if checked:
        lines.append(f"POINT_DATA {nv}")
    for name, v in checked.items():
        if v.ndim == 1:
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(t) for t in v.tolist()]
        else:
            lines.append(f"VECTORS {name} double")
            lines += [f"{a!r} {b!r} 0.0" for a, b in v.tolist()]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_vtk_summary(path):
    """Counts and point scalars of a file written by write_vtk (for checks)."""
    with open(path) as fh:
        tok = fh.read().split("\n")
    out = {"points": 0, "cells": 0, "scalars": {}}
    i = 0
    while i < len(tok):
        line = tok[i].split()
        if line[:1] == ["POINTS"]:
            out["points"] = int(line[1])
        elif line[:1] == ["CELLS"]:
            out["cells"] = int(line[1])
        elif line[:1] == ["POINT_DATA"]:
            npd = int(line[1])
            j = i + 1
            while j < len(tok) and tok[j]:
                head = tok[j].split()
                if head[0] == "SCALARS":
                    out["scalars"][head[1]] = np.array([float(t) for t in tok[j + 2:j + 2 + npd]])
                    j += 2 + npd
                elif head[0] == "VECTORS":
                    j += 1 + npd
                else:
                    break
            i = j
            continue
        i += 1
    return out


def write_csv(rows, path, columns=None):
    """Rows are dicts (or sequences when ``columns`` is given); floats keep 17 digits."""
    rows = list(rows)
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            vals = [r.get(c, "") for c in columns] if isinstance(r, dict) else list(r)
            w.writerow([_fmt(v) for v in vals])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return path


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v).__name__}")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _parse(v):
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v
