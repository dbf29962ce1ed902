"""Experiment configuration: JSON schema, loading and the derived objects."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ParameterError
from .manifold import CUSTOM, FLAT, HYPERBOLIC, SPHERE, build_builtin, custom_manifold

SCHEMA_VERSION = 1

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "geometry", "mesh_h"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "geometry": {
            "type": "object",
            "required": ["tag"],
            "additionalProperties": False,
            "properties": {
                "tag": {"enum": [FLAT, SPHERE, HYPERBOLIC, CUSTOM]},
                "params": {"type": "object"},
                "mesh_file": {"type": "string"},
            },
        },
        "mesh_h": _POSITIVE,
        "x0": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "radii": {"type": "array", "items": _POSITIVE, "minItems": 1},
        "ambient_radius": {"anyOf": [_POSITIVE, {"type": "null"}]},
        "membrane_r": _POSITIVE,
        "test_functions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "kind"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string", "pattern": "^[A-Za-z0-9_]+$"},
                    "kind": {"enum": ["constant", "coordinate-harmonic", "dist-squared",
                                      "custom-from-file"]},
                    "value": {"type": "number"},
                    "axis": {"enum": [0, 1]},
                    "path": {"type": "string"},
                    "subharmonic": {"type": "boolean"},
                },
            },
        },
        "tolerances": {"type": "object", "additionalProperties": _POSITIVE},
        "harnack": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"s": _POSITIVE, "samples": {"type": "integer", "minimum": 1}},
        },
        "key_estimate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"rho_max": _POSITIVE},
        },
        "nonparabolic": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"radii": {"type": "array", "items": _POSITIVE, "minItems": 1},
                           "max_ambient": _POSITIVE},
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"criteria": {"type": "array",
                                        "items": {"type": "integer", "minimum": 1, "maximum": 13}}},
        },
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
}

DEFAULT_TOLERANCES = {
    "psor": 1e-10,
    "green_audit": 1e-9,
    "harmonic_spread": 1e-3,
    "complementarity": 1e-6,
    "r0": 0.004,
}


class ConfigError(ParameterError):
    """Raised when a configuration file fails validation."""


@dataclass
class ExperimentConfig:
    geometry: dict
    mesh_h: float
    x0: tuple = (0.0, 0.0)
    radii: list = field(default_factory=lambda: [0.2, 0.3, 0.4, 0.5])
    ambient_radius: float | None = None
    membrane_r: float = 0.5
    test_functions: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    harnack: dict = field(default_factory=dict)
    key_estimate: dict = field(default_factory=dict)
    nonparabolic: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "mvsetlab-out"
    base_dir: Path = Path(".")

    def tol(self, name):
        return float(self.tolerances.get(name, DEFAULT_TOLERANCES[name]))

    def build_mesh(self):
        tag = self.geometry["tag"]
        if tag == CUSTOM:
            from .io import read_off
            if "mesh_file" not in self.geometry:
                raise ConfigError("custom geometry needs 'mesh_file'")
            v, t = read_off(self.base_dir / self.geometry["mesh_file"])
            return custom_manifold(v, t)
        return build_builtin(tag, self.geometry.get("params", {}), self.mesh_h)

    def test_function_fields(self):
        """Per-vertex evaluators keyed by name, plus the subharmonic flags."""
        out, flags = {}, {}
        for item in self.test_functions:
            kind, name = item["kind"], item["name"]
            if kind == "constant":
                c = float(item.get("value", 1.0))
                out[name] = lambda m, c=c: np.full(m.n_vertices, c)
            elif kind == "coordinate-harmonic":
                ax = int(item.get("axis", 0))
                out[name] = lambda m, ax=ax: m.vertices[:, ax].copy()
            elif kind == "dist-squared":
                out[name] = lambda m: np.sum((m.vertices - np.asarray(self.x0)) ** 2, axis=1)
            else:
                if "path" not in item:
                    raise ConfigError(f"test function {name!r} needs 'path'")
                vals = np.loadtxt(self.base_dir / item["path"], dtype=float).ravel()
                out[name] = lambda m, vals=vals: vals
            flags[name] = bool(item.get("subharmonic", kind == "dist-squared"))
        return out, flags


def parse_config(data, base_dir="."):
    """Validate a decoded JSON document and build an ``ExperimentConfig``."""
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    radii = data.get("radii")
    if radii is not None and any(b <= a for a, b in zip(radii, radii[1:])):
        raise ConfigError("radii: must be strictly increasing")
    fields = {k: v for k, v in data.items() if k != "schema_version"}
    if "x0" in fields:
        fields["x0"] = tuple(fields["x0"])
    return ExperimentConfig(**fields, base_dir=Path(base_dir))


def load_config(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(data, path.parent)
