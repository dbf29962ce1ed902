"""Deterministic writers for meshes, fields, tables and summaries."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def to_jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def write_json(path, data):
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def write_off(path, mesh):
    path = Path(path)
    v, t = mesh.vertices, mesh.triangles
    lines = ["OFF", f"{len(v)} {len(t)} 0"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in v.tolist()]
    lines += [f"3 {a} {b} {c}" for a, b, c in t.tolist()]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_vtk(path, mesh, point_data=None, title="mvsetlab"):
    """Legacy ASCII VTK unstructured grid with optional scalar point fields."""
    path = Path(path)
    v, t = mesh.vertices, mesh.triangles
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {len(v)} double"]
    out += [f"{x!r} {y!r} 0.0" for x, y in v.tolist()]
    out.append(f"CELLS {len(t)} {4 * len(t)}")
    out += [f"3 {a} {b} {c}" for a, b, c in t.tolist()]
    out.append(f"CELL_TYPES {len(t)}")
    out += ["5"] * len(t)
    fields = dict(point_data or {})
    if fields:
        out.append(f"POINT_DATA {len(v)}")
        for name in sorted(fields):
            vals = np.asarray(fields[name], dtype=float)
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [repr(x) for x in vals.tolist()]
    path.write_text("\n".join(out) + "\n")
    return path


def read_off(path):
    """Vertices and triangles from an OFF file (z ignored)."""
    tokens = Path(path).read_text().split()
    if not tokens or tokens[0] != "OFF":
        raise ValueError("not an OFF file")
    nv, nf = int(tokens[1]), int(tokens[2])
    pos = 4
    v = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)[:, :2]
    pos += 3 * nv
    faces = []
    for _ in range(nf):
        k = int(tokens[pos])
        faces.append([int(x) for x in tokens[pos + 1:pos + 1 + k]])
        pos += 1 + k
    return v, np.array(faces, dtype=np.int64)
