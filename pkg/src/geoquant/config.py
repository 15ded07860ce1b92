"""Experiment configuration: JSON with a versioned schema."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import exprlang as el
from .compat_structures import SpadeFamily
from .families import SPECS, builtin
from .lattice_cover import Homomorphism
from .prequantum import LocalModel
from .riemann import sobol_points

SCHEMA_VERSION = 1

_matrix = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "string"}}}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "name", "model", "field"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "model": {
            "type": "object",
            "required": ["n"],
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1, "maximum": 4},
                "R": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "sigma": {"type": "number", "exclusiveMinimum": 0},
                "m": {"type": "integer", "minimum": 1},
                "w": {"type": "array", "items": {"type": "integer"}},
                "w0": {"type": "array", "items": {"type": "integer"}},
            },
        },
        "field": {
            "oneOf": [
                {
                    "type": "object",
                    "required": ["family"],
                    "additionalProperties": False,
                    "properties": {"family": {"enum": sorted(SPECS)}},
                },
                {
                    "type": "object",
                    "required": ["a0"],
                    "additionalProperties": False,
                    "properties": {"a0": _matrix, "remainder": _matrix},
                },
            ]
        },
        "grids": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "resolution": {"type": "integer", "minimum": 8},
                "L": {"type": "number", "exclusiveMinimum": 0},
                "h": {"type": "number", "exclusiveMinimum": 0},
                "stencil_order": {"enum": [1, 2]},
            },
        },
        "s_series": {
            "type": "object",
            "required": ["s_max", "ratio", "count"],
            "additionalProperties": False,
            "properties": {
                "s_max": {"type": "number", "exclusiveMinimum": 0},
                "ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "count": {"type": "integer", "minimum": 1},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "params": {"type": "object"},
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str
    model: LocalModel
    family: SpadeFamily
    resolution: int = 64
    L: float = 6.0
    h: float = 6.0 / 128
    stencil_order: int = 2
    s_series: tuple[float, ...] = (0.1, 0.05, 0.025, 0.0125, 0.00625)
    seed: int = 0
    output_dir: Path = Path("out")
    params: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    def param(self, key, default):
        return self.params.get(key, default)


def _family(spec: dict, n: int, name: str) -> SpadeFamily:
    if "family" in spec:
        fam = builtin(spec["family"])
        if fam.n != n:
            raise ConfigError(f"family {spec['family']!r} has n={fam.n}, model has n={n}")
        return fam
    for key in ("a0", "remainder"):
        for row in spec.get(key, []):
            for entry in row:
                try:
                    el.parse(entry, n)
                except el.ParseError as exc:
                    raise ConfigError(f"field.{key}: cannot parse {entry!r}: {exc}") from None
    return SpadeFamily(n=n, a0_entries=spec["a0"], rem_entries=spec.get("remainder"), name=name)


def _check_positive_imag(fam: SpadeFamily, seed: int):
    n = fam.n
    pts = sobol_points([0.0] * n + [-0.5] * n, [1.0] * n + [0.5] * n, 128, seed)[:100]
    Q = fam.a0.value(0.0, pts[:, n:], pts[:, :n]).imag
    ev = np.linalg.eigvalsh(0.5 * (Q + np.swapaxes(Q, -1, -2)))
    if ev[:, 0].min() <= 0:
        i = int(np.argmin(ev[:, 0]))
        raise ConfigError(f"Im A0 is not positive definite at (theta, x) = {pts[i].tolist()}")


def from_dict(raw: dict, base: Path | None = None) -> ExperimentConfig:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    mo = raw["model"]
    n = mo["n"]
    m = mo.get("m", 1)
    w = tuple(mo.get("w", [1] + [0] * (n - 1)))
    if len(w) != n:
        raise ConfigError("model.w must have n entries")
    try:
        model = LocalModel(n, mo.get("R", 1.0), mo.get("sigma", 1.0), Homomorphism(n, m, w), mo.get("w0"))
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None
    fam = _family(raw["field"], n, raw["name"])
    seed = raw.get("seed", 0)
    _check_positive_imag(fam, seed)
    gr = raw.get("grids", {})
    ss = raw.get("s_series", {"s_max": 0.1, "ratio": 0.5, "count": 5})
    series = tuple(float(f"{ss['s_max'] * ss['ratio'] ** j:.15g}") for j in range(ss["count"]))
    out = Path(raw.get("output_dir", "out"))
    if base is not None and not out.is_absolute():
        out = base / out
    return ExperimentConfig(
        name=raw["name"],
        model=model,
        family=fam,
        resolution=gr.get("resolution", 64),
        L=float(gr.get("L", 6.0)),
        h=float(gr.get("h", 6.0 / 128)),
        stencil_order=gr.get("stencil_order", 2),
        s_series=series,
        seed=seed,
        output_dir=out,
        params=raw.get("params", {}),
        raw=raw,
    )


def load(path: str | Path) -> ExperimentConfig:
    """Read and validate a config file; relative output_dir resolves against the cwd."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return from_dict(raw)
