import json

import numpy as np
import pytest

from mvsetlab import io
from mvsetlab.cli import main
from mvsetlab.config import ConfigError, DEFAULT_TOLERANCES, load_config, parse_config
from mvsetlab.manifold import FLAT, build_builtin, custom_manifold

BASE = {"schema_version": 1, "geometry": {"tag": FLAT, "params": {"shape": "disk", "radius": 1.0}},
        "mesh_h": 0.05, "x0": [0.013, 0.0], "radii": [0.2, 0.3],
        "test_functions": [{"name": "one", "kind": "constant"},
                           {"name": "x", "kind": "coordinate-harmonic", "axis": 0},
                           {"name": "r2", "kind": "dist-squared"}],
        "harnack": {"s": 0.25, "samples": 4}, "seed": 3}


def write_cfg(tmp_path, **over):
    data = {**BASE, **over}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(data))
    return p


def test_csv_and_json_deterministic(tmp_path):
    rows = [(0.1, 1, True), (np.float64(1 / 3), np.int64(2), np.bool_(False))]
    a = io.write_csv(tmp_path / "a.csv", ["x", "n", "ok"], rows).read_bytes()
    b = io.write_csv(tmp_path / "b.csv", ["x", "n", "ok"], rows).read_bytes()
    assert a == b
    assert a.decode().splitlines()[2] == "0.3333333333333333,2,false"
    d = {"b": np.arange(3), "a": np.float32(0.5), "c": float("nan")}
    ja = io.write_json(tmp_path / "a.json", d).read_text()
    assert ja == io.write_json(tmp_path / "b.json", d).read_text()
    assert json.loads(ja) == {"a": 0.5, "b": [0, 1, 2], "c": "nan"}


def test_off_roundtrip_and_vtk(tmp_path):
    m = build_builtin(FLAT, {"shape": "square", "side": 1.0}, 0.25)
    v, t = io.read_off(io.write_off(tmp_path / "m.off", m))
    assert np.array_equal(v, m.vertices) and np.array_equal(t, m.triangles)
    back = custom_manifold(v, t)
    assert back.n_vertices == m.n_vertices
    text = io.write_vtk(tmp_path / "m.vtk", m, {"b": m.boundary, "a": m.conformal_factor}).read_text()
    lines = text.splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0" and lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert text.index("SCALARS a") < text.index("SCALARS b")
    with pytest.raises(ValueError):
        io.read_off(tmp_path / "m.vtk")


def test_config_defaults_and_fields(tmp_path):
    cfg = load_config(write_cfg(tmp_path))
    assert cfg.tol("psor") == DEFAULT_TOLERANCES["psor"]
    fields, flags = cfg.test_function_fields()
    m = cfg.build_mesh()
    assert np.all(fields["one"](m) == 1.0)
    assert flags == {"one": False, "x": False, "r2": True}


@pytest.mark.parametrize("bad", [
    {"schema_version": 2},
    {"radii": [0.3, 0.2]},
    {"mesh_h": -1},
    {"geometry": {"tag": "torus"}},
    {"unknown": 1},
    {"test_functions": [{"name": "bad name", "kind": "constant"}]},
])
def test_config_validation(bad, tmp_path):
    with pytest.raises(ConfigError):
        parse_config({**BASE, **bad})
    assert main(["mesh", "--config", str(write_cfg(tmp_path, **bad))]) == 2


def test_unreadable_config(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{")
    assert main(["mesh", "--config", str(p)]) == 2


def test_custom_geometry_needs_file(tmp_path):
    p = write_cfg(tmp_path, geometry={"tag": "custom"})
    assert main(["mesh", "--config", str(p), "--output", str(tmp_path / "o")]) == 2


def test_mesh_command(tmp_path):
    out = tmp_path / "out"
    assert main(["mesh", "--config", str(write_cfg(tmp_path)), "--output", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["total_lumped_mass"] == pytest.approx(np.pi, rel=0.01)
    assert json.loads((out / "verdict.json").read_text())["passed"] is True
    assert (out / "mesh.off").exists() and (out / "run.log").exists()


def test_green_reports_snapping(tmp_path):
    out = tmp_path / "g"
    assert main(["green", "--config", str(write_cfg(tmp_path)), "--output", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["x0_requested"] == [0.013, 0.0]
    assert s["x0_snapped"] != s["x0_requested"]


def test_sweep_outputs_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    for name in ("r1", "r2"):
        assert main(["sweep", "--config", str(cfg), "--output", str(tmp_path / name)]) == 0
    for f in ("sweep.csv", "summary.json", "verdict.json"):
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()
    header = (tmp_path / "r1" / "sweep.csv").read_text().splitlines()[0]
    assert header == "r,volume,r_squared,touches_boundary,avg_one,avg_r2,avg_x"


def test_harnack_seeded(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["harnack", "--config", str(cfg), "--output", str(tmp_path / "a"), "--seed", "5"])
    main(["harnack", "--config", str(cfg), "--output", str(tmp_path / "b"), "--seed", "5",
          "--jobs", "2"])
    assert (tmp_path / "a" / "harnack.csv").read_bytes() == (tmp_path / "b" / "harnack.csv").read_bytes()


def test_nonparabolic_needs_hyperbolic(tmp_path):
    assert main(["nonparabolic", "--config", str(write_cfg(tmp_path)),
                 "--output", str(tmp_path / "n")]) == 2


def test_bad_jobs(tmp_path):
    with pytest.raises(SystemExit):
        main(["mesh", "--config", str(write_cfg(tmp_path)), "--jobs", "0"])
