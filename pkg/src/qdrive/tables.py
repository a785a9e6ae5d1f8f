"""Delimited output tables, run manifests and gnuplot scripts.

Tables are UTF-8 text with tab-separated columns. Every table starts with
``#`` header lines carrying the tool version, the config hash and the
column names, followed by free-form ``key: value`` metadata. Numbers are
written with 17 significant digits so identical runs give identical
bytes.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__


def _format(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if np.isnan(v):
        return "nan"
    return repr(v) if np.isfinite(v) else ("inf" if v > 0 else "-inf")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(path, columns, data, config_hash: str, meta: dict | None = None) -> Path:
    """Write ``data`` (rows x columns) with the standard ``#`` header."""
    path = Path(path)
    data = np.atleast_2d(np.asarray(data, dtype=float)) if np.size(data) else np.zeros((0, len(columns)))
    if data.shape[1] != len(columns):
        raise ValueError(f"{len(columns)} column names for {data.shape[1]} columns")
    lines = [f"# qdrive {__version__}", f"# config_sha256: {config_hash}"]
    for key, value in (meta or {}).items():
        lines.append(f"# {key}: {value}")
    lines.append("# columns: " + "\t".join(columns))
    lines.extend("\t".join(_format(v) for v in row) for row in data)
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


def write_matrix(path, matrix, config_hash: str, meta: dict | None = None) -> Path:
    """Dense matrix without column names (gnuplot ``matrix`` layout)."""
    path = Path(path)
    lines = [f"# qdrive {__version__}", f"# config_sha256: {config_hash}"]
    for key, value in (meta or {}).items():
        lines.append(f"# {key}: {value}")
    lines.extend("\t".join(_format(v) for v in row) for row in np.atleast_2d(matrix))
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


def read_table(path):
    """Return ``(columns, data, meta)`` of a table written by :func:`write_table`."""
    columns, meta, rows = [], {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("columns:"):
                    columns = body[len("columns:"):].strip().split("\t")
                elif ":" in body:
                    key, value = body.split(":", 1)
                    meta[key.strip()] = value.strip()
                elif body.startswith("qdrive "):
                    meta["version"] = body.split()[1]
            elif line:
                rows.append([float(v) for v in line.split("\t")])
    data = np.array(rows, dtype=float).reshape(len(rows), len(columns) if columns else -1)
    return columns, data, meta


def write_gnuplot(path, table: Path, title: str, columns, x: int = 1, ys=None,
                  logx: bool = True, logy: bool = True, xlabel: str = "", ylabel: str = "",
                  style: str = "lines") -> Path:
    """Plot script for a table; the script reads the table by relative name."""
    path = Path(path)
    ys = list(ys) if ys is not None else list(range(2, len(columns) + 1))
    lines = [f"# generated by qdrive {__version__}",
             "set datafile separator '\\t'",
             f"set title '{title}' noenhanced",
             f"set xlabel '{xlabel or columns[x - 1]}' noenhanced",
             f"set ylabel '{ylabel}' noenhanced",
             "set key outside right noenhanced"]
    if logx:
        lines.append("set logscale x")
    if logy:
        lines.append("set logscale y")
        lines.append("set format y '10^{%L}'")
    plots = [f"'{table.name}' using {x}:{y} with {style} title '{columns[y - 1]}'" for y in ys]
    lines.append("plot " + ", \\\n     ".join(plots))
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


def write_gnuplot_matrix(path, matrix_file: Path, title: str, extent, shape) -> Path:
    """Heat-map script for a dense matrix (rows along ``y``) with ``extent = (x0, x1, y0, y1)``."""
    path = Path(path)
    x0, x1, y0, y1 = (float(v) for v in extent)
    ny, nx = shape
    dx = (x1 - x0) / max(nx - 1, 1)
    dy = (y1 - y0) / max(ny - 1, 1)
    lines = [f"# generated by qdrive {__version__}",
             "set datafile separator '\\t'",
             f"set title '{title}' noenhanced",
             "set xlabel 'lambda'", "set ylabel 'chi'",
             "set palette gray", "set logscale cb",
             f"plot '{matrix_file.name}' matrix using ({x0!r}+$1*{dx!r}):({y0!r}+$2*{dy!r}):3 "
             "with image notitle"]
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


@dataclass
class RunManifest:
    """Record of one CLI run, written atomically when the run ends."""

    config_hash: str
    command: str
    name: str
    version: str = __version__
    tasks: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    started: float = field(default_factory=time.time)
    wall_time: float = 0.0

    def task(self, name: str, status: str, seconds: float, message: str = "") -> None:
        self.tasks.append({"name": name, "status": status, "seconds": round(seconds, 6),
                           "message": message})

    def output(self, path) -> Path:
        self.outputs.append(Path(path).name)
        return Path(path)

    @property
    def failed(self) -> bool:
        return any(t["status"] != "ok" for t in self.tasks)

    def write(self, directory) -> Path:
        self.wall_time = time.time() - self.started
        body = {"config_sha256": self.config_hash, "command": self.command, "name": self.name,
                "version": self.version, "status": "failed" if self.failed else "ok",
                "wall_time": round(self.wall_time, 6), "tasks": self.tasks,
                "outputs": sorted(set(self.outputs))}
        path = Path(directory) / "manifest.json"
        _atomic_write(path, json.dumps(body, indent=2, sort_keys=True) + "\n")
        return path
