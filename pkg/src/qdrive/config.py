"""Experiment configuration: TOML parsing, schema validation and hashing.

A configuration is a TOML document with a ``schema`` version, a
``command`` and command-specific tables. Unknown keys are rejected,
defaults are filled in, and the hash is the SHA-256 of the canonical JSON
of the normalized document, so whitespace, key order and spelled-out
defaults do not change it.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError

SCHEMA_VERSION = 1
COMMANDS = ("sweep", "evolve", "geodesic", "crossover", "gapmap")

_NUM = (int, float)

# section -> key -> (types, default); a default of ... means required
_TOP = {
    "schema": (int, ...),
    "command": (str, ...),
    "name": (str, "run"),
    "description": (str, ""),
}
_MODEL = {
    "name": (str, ...),
    "N": ((int, list), None),
}
_PATH = {
    "label": (str, None),
    "start": (list, None),
    "end": (list, None),
    "ends": (list, None),
    "x0": (_NUM, None),
    "z0": (_NUM, None),
}
_GRID = {
    "T_min": (_NUM, 1.0),
    "T_max": (_NUM, 1000.0),
    "per_decade": (int, 25),
    "values": (list, None),
}
_RUN = {
    "tol": (_NUM, 1e-10),
    "workers": (int, 0),
    "apt": (bool, False),
    "backend": (str, "auto"),
}
_EVOLVE = {
    "times": (list, ...),
    "samples": (int, 2000),
}
_GEODESIC = {
    "mesh_size": (int, 201),
    "ridge_points": (int, 121),
}
_CROSSOVER = {
    "method": (str, "sweep"),
    "x0": (list, None),
    "z0_min": (_NUM, 0.01),
    "z0_max": (_NUM, 1.0),
    "z0_points": (int, 60),
    "r2_min": (_NUM, 0.999),
}
_GAPMAP = {
    "lambda": (list, ...),
    "chi": (list, ...),
}

_SECTIONS = {
    "model": (_MODEL, True),
    "grid": (_GRID, False),
    "run": (_RUN, False),
    "evolve": (_EVOLVE, False),
    "geodesic": (_GEODESIC, False),
    "crossover": (_CROSSOVER, False),
    "gapmap": (_GAPMAP, False),
}


def _check_table(data, schema, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a table")
    unknown = sorted(set(data) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    out = {}
    for key, (types, default) in schema.items():
        if key in data:
            value = data[key]
            if isinstance(value, bool) and types is not bool:
                raise ConfigError(f"{where}.{key} has the wrong type (bool)")
            if not isinstance(value, types):
                raise ConfigError(f"{where}.{key} has the wrong type "
                                  f"({type(value).__name__})")
            out[key] = float(value) if types is _NUM else value
        elif default is ...:
            raise ConfigError(f"missing required key {where}.{key}")
        elif default is not None:
            out[key] = default
    return out


def _point(value, where):
    if not isinstance(value, list) or not value or not all(
            isinstance(v, _NUM) and not isinstance(v, bool) for v in value):
        raise ConfigError(f"{where} must be a list of numbers")
    return [float(v) for v in value]


def _normalize_paths(raw, model_name):
    if not isinstance(raw, list) or not raw:
        raise ConfigError("at least one [[paths]] entry is required")
    paths = []
    for i, entry in enumerate(raw):
        where = f"paths[{i}]"
        p = _check_table(entry, _PATH, where)
        if "x0" in p or "z0" in p:
            if model_name != "two-level":
                raise ConfigError(f"{where}: x0/z0 only apply to the two-level model")
            if "x0" not in p or "z0" not in p or "start" in p or "end" in p or "ends" in p:
                raise ConfigError(f"{where}: give both x0 and z0 and no explicit endpoints")
            x0, z0 = p["x0"], p["z0"]
            if x0 <= 0:
                raise ConfigError(f"{where}: x0 must be positive")
            label = p.get("label", f"x{x0:g}_z{z0:g}")
            paths.append({"label": label, "start": [-x0, z0], "end": [x0, z0],
                          "x0": x0, "z0": z0})
            continue
        if "start" not in p:
            raise ConfigError(f"{where}: missing start")
        start = _point(p["start"], where + ".start")
        if ("end" in p) == ("ends" in p):
            raise ConfigError(f"{where}: give exactly one of end or ends")
        ends = [p["end"]] if "end" in p else p["ends"]
        if not ends:
            raise ConfigError(f"{where}.ends is empty")
        for j, end in enumerate(ends):
            end = _point(end, f"{where}.end")
            if len(end) != len(start):
                raise ConfigError(f"{where}: start and end differ in dimension")
            base = p.get("label", "path")
            label = base if len(ends) == 1 else f"{base}_{j}"
            if "label" not in p:
                label = "to_" + "_".join(f"{v:g}" for v in end)
            paths.append({"label": label, "start": start, "end": end})
    labels = [p["label"] for p in paths]
    if len(set(labels)) != len(labels):
        raise ConfigError("path labels must be unique")
    return paths


def _normalize_protocols(raw):
    if not isinstance(raw, list) or not raw:
        raise ConfigError("protocols must be a non-empty list")
    out = []
    for item in raw:
        if isinstance(item, str):
            label = item.strip().upper()
            if not (label in ("A", "C", "D") or (label.startswith("B") and label[1:].isdigit())):
                raise ConfigError(f"unknown protocol label {item!r}")
            out.append(label)
        elif isinstance(item, dict):
            allowed = {"label", "shape", "schedule", "k", "mesh_size"}
            unknown = sorted(set(item) - allowed)
            if unknown:
                raise ConfigError(f"unknown protocol key(s): {', '.join(unknown)}")
            if item.get("shape", "line") not in ("line", "arc", "geodesic"):
                raise ConfigError(f"unknown shape {item.get('shape')!r}")
            if item.get("schedule", "linear") not in ("linear", "poly", "const-speed"):
                raise ConfigError(f"unknown schedule {item.get('schedule')!r}")
            if item.get("schedule") == "poly" and not isinstance(item.get("k"), int):
                raise ConfigError("poly schedules need an integer k")
            out.append(dict(sorted(item.items())))
        else:
            raise ConfigError("protocol entries are labels or tables")
    return out


def normalize(data: dict) -> dict:
    """Validate a parsed configuration and fill in defaults."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table")
    allowed = set(_TOP) | set(_SECTIONS) | {"paths", "protocols"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    top = _check_table({k: v for k, v in data.items() if k in _TOP}, _TOP, "config")
    if top["schema"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {top['schema']} "
                          f"(expected {SCHEMA_VERSION})")
    command = top["command"]
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    out = dict(top)
    for name, (schema, required) in _SECTIONS.items():
        if name in data or required:
            if name not in data:
                raise ConfigError(f"missing [{name}] table")
            out[name] = _check_table(data[name], schema, name)
    out.setdefault("run", _check_table({}, _RUN, "run"))

    model = out["model"]
    if model["name"] not in ("two-level", "lipkin"):
        raise ConfigError(f"unknown model {model['name']!r}")
    if model["name"] == "lipkin":
        n = model.get("N")
        ns = n if isinstance(n, list) else [n]
        if n is None or not ns or not all(isinstance(v, int) and not isinstance(v, bool)
                                          and v >= 1 for v in ns):
            raise ConfigError("lipkin model needs N (positive integer or list)")
        model["N"] = ns
    elif "N" in model:
        raise ConfigError("N only applies to the lipkin model")

    run = out["run"]
    if run["tol"] <= 0:
        raise ConfigError("run.tol must be positive")
    if run["workers"] < 0:
        raise ConfigError("run.workers must be >= 0 (0 means all cores)")
    if run["backend"] not in ("auto", "cython", "python"):
        raise ConfigError("run.backend must be auto, cython or python")

    if command == "gapmap":
        if model["name"] != "lipkin":
            raise ConfigError("gapmap needs the lipkin model")
        if "gapmap" not in out:
            raise ConfigError("missing [gapmap] table")
        for key in ("lambda", "chi"):
            g = out["gapmap"][key]
            if len(g) != 3 or not isinstance(g[2], int) or g[2] < 1:
                raise ConfigError(f"gapmap.{key} must be [min, max, points]")
            lo, hi = float(g[0]), float(g[1])
            if hi < lo or (g[2] > 1 and hi == lo):
                raise ConfigError(f"gapmap.{key} bounds are inverted or empty")
            out["gapmap"][key] = [lo, hi, g[2]]
        return out

    if command == "crossover" and "crossover" not in out:
        out["crossover"] = _check_table({}, _CROSSOVER, "crossover")
    analytic_only = command == "crossover" and out["crossover"]["method"] == "analytic"
    if command == "crossover":
        c = out["crossover"]
        if c["method"] not in ("sweep", "analytic"):
            raise ConfigError("crossover.method must be sweep or analytic")
        if analytic_only:
            if model["name"] != "two-level" or not c.get("x0"):
                raise ConfigError("analytic crossover needs the two-level model and x0 values")
            if not 0 < c["z0_min"] < c["z0_max"]:
                raise ConfigError("need 0 < z0_min < z0_max")
            c["x0"] = [float(v) for v in c["x0"]]
            return out

    out["paths"] = _normalize_paths(data.get("paths"), model["name"])
    if command == "geodesic":
        if model["name"] != "lipkin":
            raise ConfigError("geodesics are only defined for the lipkin model")
        out.setdefault("geodesic", _check_table({}, _GEODESIC, "geodesic"))
        return out
    out["protocols"] = _normalize_protocols(data.get("protocols"))

    if command == "evolve":
        if "evolve" not in out:
            raise ConfigError("missing [evolve] table")
        times = out["evolve"]["times"]
        if not times or not all(isinstance(t, _NUM) and t > 0 for t in times):
            raise ConfigError("evolve.times must be a non-empty list of positive numbers")
        out["evolve"]["times"] = [float(t) for t in times]
        if out["evolve"]["samples"] < 2:
            raise ConfigError("evolve.samples must be >= 2")
        return out

    grid = out.setdefault("grid", _check_table({}, _GRID, "grid"))
    if "values" in grid:
        vals = grid["values"]
        if not vals or not all(isinstance(t, _NUM) and t > 0 for t in vals):
            raise ConfigError("grid.values must be positive numbers")
        vals = [float(t) for t in vals]
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("grid.values must be strictly increasing")
        out["grid"] = {"values": vals}
    else:
        if not 0 < grid["T_min"] <= grid["T_max"]:
            raise ConfigError("need 0 < grid.T_min <= grid.T_max")
        if grid["per_decade"] < 1:
            raise ConfigError("grid.per_decade must be >= 1")
    return out


def T_grid(grid: dict):
    """Expand a normalized grid table into an increasing array of ``T``."""
    if "values" in grid:
        return np.asarray(grid["values"], dtype=float)
    lo, hi = np.log10(grid["T_min"]), np.log10(grid["T_max"])
    n = max(1, int(round((hi - lo) * grid["per_decade"]))) + 1
    if hi == lo:
        return np.array([grid["T_min"]])
    return np.logspace(lo, hi, n)


def canonical_json(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of a normalized configuration.

    The worker count is excluded: results do not depend on it.
    """
    semantic = copy.deepcopy(config)
    semantic.get("run", {}).pop("workers", None)
    return hashlib.sha256(canonical_json(semantic).encode("utf-8")).hexdigest()


def loads(text: str) -> dict:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return normalize(data)


def load(path) -> dict:
    return loads(Path(path).read_text(encoding="utf-8"))


def preset_names() -> list[str]:
    root = resources.files("qdrive") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def preset_text(name: str) -> str:
    path = resources.files("qdrive") / "presets" / f"{name}.toml"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return path.read_text(encoding="utf-8")


def load_preset(name: str) -> dict:
    return loads(preset_text(name))


def with_overrides(config: dict, tol=None, workers=None) -> dict:
    """Copy of ``config`` with command-line overrides applied."""
    out = copy.deepcopy(config)
    if tol is not None:
        if tol <= 0:
            raise ConfigError("--tol must be positive")
        out["run"]["tol"] = float(tol)
    if workers is not None:
        if workers < 0:
            raise ConfigError("--workers must be >= 0")
        out["run"]["workers"] = int(workers)
    return out
