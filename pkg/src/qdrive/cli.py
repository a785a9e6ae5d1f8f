"""Command-line entry point ``qdrive``.

Subcommands ``sweep``, ``evolve``, ``geodesic``, ``crossover`` and
``gapmap`` run an experiment described by a TOML config (``--config``) or
a shipped preset (``--preset``); ``preset NAME`` runs a preset with the
command it declares. Results go to ``--out`` (overridden by the
``QDRIVE_OUT`` environment variable) as tab-separated tables, gnuplot
scripts and a ``manifest.json`` written at the end of the run.

Exit status is 0 on success, 1 when any task failed and 2 for invalid
configurations or usage.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, config as cfg
from .analysis import (asymptotic_onset, crossover_from_sweep, crossover_time_lambert,
                       gap_map, min_gap_along_line, apt_relative_error, XI)
from .apt import apt_prediction
from .errors import QDriveError
from .geometry import geodesic_bvp
from .models import LipkinModel, TwoLevelModel
from .propagator import PreparedProtocol, evolve, sweep_final_infidelity
from .protocols import build_protocol
from .tables import (RunManifest, write_gnuplot, write_gnuplot_matrix, write_matrix,
                     write_table)

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _models(config):
    spec = config["model"]
    if spec["name"] == "two-level":
        return [("two-level", TwoLevelModel())]
    return [(f"N{n}", LipkinModel(n)) for n in spec["N"]]


def _protocol(model, spec, path):
    if isinstance(spec, str):
        return build_protocol(model, spec, path["start"], path["end"])
    return build_protocol(model, dict(spec), path["start"], path["end"])


def _tag(*parts):
    return "_".join(str(p).replace("/", "-").replace(" ", "") for p in parts if p)


def _workers(config):
    return config["run"]["workers"] or None


def _backend(config):
    b = config["run"]["backend"]
    return None if b == "auto" else b


class Runner:
    """Shared state of one CLI invocation."""

    def __init__(self, config, out: Path):
        self.config = config
        self.out = out
        self.hash = cfg.config_hash(config)
        self.manifest = RunManifest(self.hash, config["command"], config["name"])
        out.mkdir(parents=True, exist_ok=True)

    def table(self, name, columns, data, **meta):
        meta = {"command": self.config["command"], "run": self.config["name"], **meta}
        return self.manifest.output(write_table(self.out / name, columns, data, self.hash, meta))

    def plot(self, name, table, title, columns, **kw):
        return self.manifest.output(write_gnuplot(self.out / name, table, title, columns, **kw))

    def attempt(self, name, func):
        t0 = time.time()
        try:
            result = func()
        except QDriveError as exc:
            self.manifest.task(name, "failed", time.time() - t0, str(exc))
            print(f"qdrive: {name}: {exc}", file=sys.stderr)
            return None
        self.manifest.task(name, "ok", time.time() - t0)
        return result

    def finish(self):
        self.manifest.write(self.out)
        return EXIT_FAILED if self.manifest.failed else EXIT_OK


def cmd_sweep(run: Runner):
    config = run.config
    T = cfg.T_grid(config["grid"])
    tol = config["run"]["tol"]
    for mname, model in _models(config):
        for path in config["paths"]:
            tag = _tag(mname, path["label"])
            protocols = run.attempt(f"{tag}:build", lambda: [_protocol(model, p, path)
                                                              for p in config["protocols"]])
            if protocols is None:
                continue
            t0 = time.time()
            sweep = sweep_final_infidelity(model, protocols, T, tol, _workers(config),
                                           _backend(config))
            for f in sweep.failures:
                run.manifest.task(f"{tag}:{f['protocol']}:T={f['T']!r}", "failed", 0.0, f["error"])
            run.manifest.task(f"{tag}:sweep", "ok" if not sweep.failures else "failed",
                              time.time() - t0, f"{len(sweep.failures)} failed cells")
            cols = ["T"] + [f"I_{lab}" for lab in sweep.labels]
            meta = {"model": mname, "start": path["start"], "end": path["end"], "tol": tol}
            table = run.table(f"sweep_{tag}.tsv", cols, sweep.table(), **meta)
            run.plot(f"sweep_{tag}.gp", table, f"final infidelity {tag}", cols,
                     ylabel="I(1)")
            for lab, proto in zip(sweep.labels, protocols):
                run.table(f"sweep_{tag}_{lab}.tsv", ["T", "I"],
                          np.column_stack([T, sweep.column(lab)]), protocol=lab, **meta)
                if not config["run"]["apt"]:
                    continue
                pred = run.attempt(f"{tag}:{lab}:apt", lambda: apt_prediction(model, proto))
                if pred is None:
                    continue
                rel = apt_relative_error(T, sweep.column(lab), pred)
                apt_cols = ["T", "I_exact", "I_APT", "I_APT_max", "relative_error"]
                t = run.table(f"apt_{tag}_{lab}.tsv", apt_cols, rel, protocol=lab,
                              order=pred.order, **meta)
                run.plot(f"apt_{tag}_{lab}.gp", t, f"APT relative error {tag} {lab}", apt_cols,
                         ys=[5], logy=False, ylabel="relative error")


def cmd_evolve(run: Runner):
    config = run.config
    ev = config["evolve"]
    tol = config["run"]["tol"]
    for mname, model in _models(config):
        for path in config["paths"]:
            for spec in config["protocols"]:
                proto = run.attempt(_tag(mname, path["label"], "build"),
                                    lambda: _protocol(model, spec, path))
                if proto is None:
                    continue
                prep = PreparedProtocol(model, proto)
                for T in ev["times"]:
                    tag = _tag(mname, path["label"], proto.label, f"T{T:g}")
                    res = run.attempt(tag, lambda: evolve(model, proto, T, tol, ev["samples"],
                                                          prepared=prep,
                                                          backend=_backend(config)))
                    if res is None:
                        continue
                    cols = ["tau", "I", "F", "E_mean", "E_var"]
                    t = run.table(f"evolve_{tag}.tsv", cols, res.table(), model=mname,
                                  protocol=proto.label, T=T, norm_drift=res.norm_drift,
                                  final_infidelity=res.final_infidelity)
                    run.plot(f"evolve_{tag}.gp", t, f"instantaneous infidelity {tag}", cols,
                             ys=[2], logx=False, ylabel="I(tau)")


def cmd_geodesic(run: Runner):
    config = run.config
    geo = config["geodesic"]
    for mname, model in _models(config):
        curves = []
        for path in config["paths"]:
            tag = _tag(mname, path["label"])
            curve = run.attempt(f"{tag}:geodesic", lambda: geodesic_bvp(
                model, path["start"], path["end"], geo["mesh_size"]))
            if curve is None:
                continue
            curves.append((path, curve))
            cols = ["s", "lambda", "chi", "length", "gap"]
            t = run.table(f"geodesic_{tag}.tsv", cols, curve.table(model), model=mname,
                          start=path["start"], end=path["end"],
                          max_residual=curve.max_residual,
                          speed_uniformity=curve.speed_uniformity(model),
                          iterations=curve.iterations)
            run.plot(f"geodesic_{tag}.gp", t, f"geodesic {tag}", cols, x=2, ys=[3],
                     logx=False, logy=False, ylabel="chi")
        if not curves:
            continue
        # precritical ridge: per-chi minimum of the gap over lambda
        pts = np.array([p["end"] for p, _ in curves] + [p["start"] for p, _ in curves])
        nodes = np.vstack([c.nodes for _, c in curves])
        chi_hi = float(max(np.max(np.abs(pts[:, 1])), np.max(np.abs(nodes[:, 1]))))
        lam_hi = float(max(np.max(pts[:, 0]), np.max(nodes[:, 0])))
        n = geo["ridge_points"]
        gm = gap_map(model, np.linspace(0.0, max(lam_hi, 1.5), 2 * n),
                     np.linspace(0.0, max(chi_hi, 1e-3), n))
        ridge = gm.ridge_in_lambda()
        t = run.table(f"ridge_{mname}.tsv", ["chi", "lambda_min", "gap_min"], ridge,
                      model=mname)
        lines = [f"ridge_{mname}.tsv"] + [f"geodesic_{_tag(mname, p['label'])}.tsv"
                                         for p, _ in curves]
        _combined_geodesic_plot(run, mname, lines)


def _combined_geodesic_plot(run, mname, files):
    path = run.out / f"geodesics_{mname}.gp"
    body = [f"# generated by qdrive {__version__}", "set datafile separator '\\t'",
            f"set title 'geodesics {mname}' noenhanced", "set xlabel 'lambda'",
            "set ylabel 'chi'", "unset key"]
    plots = [f"'{files[0]}' using 2:1 with lines lw 3 dt 2"]
    plots += [f"'{f}' using 2:3 with lines" for f in files[1:]]
    body.append("plot " + ", \\\n     ".join(plots))
    path.write_text("\n".join(body) + "\n", encoding="utf-8")
    run.manifest.output(path)


def cmd_crossover(run: Runner):
    config = run.config
    cx = config["crossover"]
    if cx["method"] == "analytic":
        z0 = np.logspace(np.log10(cx["z0_min"]), np.log10(cx["z0_max"]), cx["z0_points"])
        for x0 in cx["x0"]:
            rows = []
            for z in z0:
                est = crossover_time_lambert(x0, z)
                rows.append((2 * z, est.T_c, float(est.exists)))
            # the limiting ratio closes each curve at its low-T_c end
            zl = x0 / XI
            if cx["z0_min"] <= zl <= cx["z0_max"]:
                rows.append((2 * zl, crossover_time_lambert(x0, zl).T_c, 1.0))
                rows.sort()
            t = run.table(f"crossover_lambert_x{x0:g}.tsv", ["min_gap", "T_c", "exists"],
                          np.array(rows), x0=x0, method="lambert-analytic", xi=XI)
            run.plot(f"crossover_lambert_x{x0:g}.gp", t, f"crossover time x0={x0:g}",
                     ["min_gap", "T_c", "exists"], ys=[2], ylabel="T_c")
            run.manifest.task(f"lambert_x{x0:g}", "ok", 0.0)
        return
    T = cfg.T_grid(config["grid"])
    tol = config["run"]["tol"]
    for path in config["paths"]:
        rows, labels = [], None
        for mname, model in _models(config):
            tag = _tag(mname, path["label"])
            protocols = run.attempt(f"{tag}:build", lambda: [_protocol(model, p, path)
                                                              for p in config["protocols"]])
            if protocols is None:
                continue
            labels = [p.label for p in protocols]
            sweep = sweep_final_infidelity(model, protocols, T, tol, _workers(config),
                                           _backend(config))
            run.manifest.task(f"{tag}:sweep", "ok" if not sweep.failures else "failed", 0.0)
            run.table(f"crossover_sweep_{tag}.tsv", ["T"] + [f"I_{lab}" for lab in labels],
                      sweep.table(), model=mname, start=path["start"], end=path["end"])
            if "x0" in path:
                gap = 2.0 * abs(path["z0"])
            else:
                gap = min_gap_along_line(model, path["start"], path["end"])[1]
            row = [getattr(model, "n_qubits", 1), gap]
            for lab, proto in zip(labels, protocols):
                est = run.attempt(f"{tag}:{lab}:crossover",
                                  lambda: _crossover_estimate(model, proto, T,
                                                              sweep.column(lab), cx, path))
                row += [est.T_c if est is not None and est.exists else np.nan]
            if "x0" in path:
                row.append(crossover_time_lambert(path["x0"], path["z0"]).T_c)
            rows.append(row)
        if not rows:
            continue
        cols = ["N", "min_gap"] + [f"T_c_{lab}" for lab in labels]
        if "x0" in path:
            cols.append("T_c_lambert")
        method = ("curve-intersection" if config["model"]["name"] == "two-level"
                  else "apt-onset")
        t = run.table(f"crossover_{_tag(path['label'])}.tsv", cols, np.array(rows),
                      method=method, start=path["start"], end=path["end"])
        run.plot(f"crossover_{_tag(path['label'])}.gp", t, f"crossover times {path['label']}",
                 cols, x=2, ys=list(range(3, len(cols) + 1)), style="linespoints",
                 ylabel="T_c")


def _crossover_estimate(model, proto, T, I, cx, path):
    pred = apt_prediction(model, proto)
    if isinstance(model, TwoLevelModel):
        return crossover_from_sweep((T, I), algebraic=pred, r2_min=cx["r2_min"])
    return asymptotic_onset(T, I, pred)


def cmd_gapmap(run: Runner):
    config = run.config
    g = config["gapmap"]
    lam = np.linspace(*g["lambda"][:2], g["lambda"][2])
    chi = np.linspace(*g["chi"][:2], g["chi"][2])
    for mname, model in _models(config):
        gm = run.attempt(f"{mname}:gapmap", lambda: gap_map(model, lam, chi))
        if gm is None:
            continue
        meta = {"model": mname, "lambda_grid": g["lambda"], "chi_grid": g["chi"]}
        mat = run.manifest.output(write_matrix(run.out / f"gapmap_{mname}.mat", gm.gaps,
                                               run.hash, {"layout": "row = chi index, "
                                                          "column = lambda index", **meta}))
        run.table(f"gapmap_{mname}.tsv", ["lambda", "chi", "gap"], gm.table(), **meta)
        run.table(f"ridge_chi_{mname}.tsv", ["lambda", "chi_min", "gap_min"],
                  gm.ridge_in_chi(), **meta)
        run.table(f"ridge_lambda_{mname}.tsv", ["chi", "lambda_min", "gap_min"],
                  gm.ridge_in_lambda(), **meta)
        run.manifest.output(write_gnuplot_matrix(
            run.out / f"gapmap_{mname}.gp", mat, f"gap map {mname}",
            (lam[0], lam[-1], chi[0], chi[-1]), gm.gaps.shape))


COMMANDS = {"sweep": cmd_sweep, "evolve": cmd_evolve, "geodesic": cmd_geodesic,
            "crossover": cmd_crossover, "gapmap": cmd_gapmap}


def _parser():
    parser = argparse.ArgumentParser(prog="qdrive", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"qdrive {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (TOML)")
    common.add_argument("--preset", help="shipped preset used as the config")
    common.add_argument("--out", type=Path, help="output directory (QDRIVE_OUT overrides)")
    common.add_argument("--workers", type=int, help="worker processes (0 = all cores)")
    common.add_argument("--tol", type=float, help="integrator relative tolerance")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=f"run a {name} experiment")
    p = sub.add_parser("preset", parents=[common], help="run a named preset")
    p.add_argument("name", nargs="?", help="preset name; omit to list presets")
    return parser


def _resolve_config(args):
    if args.command == "preset":
        name = args.name or args.preset
        if name is None:
            return None
        return cfg.load_preset(name)
    if (args.config is None) == (args.preset is None):
        raise cfg.ConfigError("give exactly one of --config or --preset")
    config = cfg.load(args.config) if args.config else cfg.load_preset(args.preset)
    if config["command"] != args.command:
        raise cfg.ConfigError(f"config declares command {config['command']!r}, "
                              f"not {args.command!r}")
    return config


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = _resolve_config(args)
        if config is None:
            print("\n".join(cfg.preset_names()))
            return EXIT_OK
        config = cfg.with_overrides(config, args.tol, args.workers)
    except (QDriveError, OSError) as exc:
        print(f"qdrive: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = os.environ.get("QDRIVE_OUT") or args.out or Path("qdrive_out") / config["name"]
    run = Runner(config, Path(out))
    COMMANDS[config["command"]](run)
    status = run.finish()
    print(f"qdrive: wrote {len(run.manifest.outputs)} files to {run.out} "
          f"({'failed' if status else 'ok'})")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
