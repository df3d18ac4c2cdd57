"""Batch command line: generate, fit, bifit, spfit, cut, export, bench.

Exit codes: 0 success, 2 input/configuration error, 3 numeric failure.
All output files are written atomically (temp file + rename) and floats are
serialized with round-trip precision.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .clusterpath import (
    auto_lambda_grid,
    cut_dendrogram,
    dendrogram_from_dict,
    dendrogram_leaf_order,
    dendrogram_to_dict,
    dendrogram_to_newick,
    fit_clusterpath,
)
from .data import FLOAT_FMT, read_csv, write_csv
from .datasets import MODELS, generate
from .errors import (
    ConfigurationError,
    InvalidDataError,
    InvalidProblemError,
    InvalidStateError,
    NumericError,
    TreefuseError,
)
from .extensions import default_config, fit_bicluster, fit_sparse
from .metrics import accuracy
from .tree import build_euclidean_mst
from .weights import WeightConfig, compute_weights

_EXIT_INPUT = 2
_EXIT_NUMERIC = 3


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=1) + "\n")


def _write_labels(path, labels) -> None:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["index", "label"])
    for i, lab in enumerate(labels):
        w.writerow([i, int(lab)])
    _atomic_write(path, buf.getvalue())


def _load_config_file(path) -> dict:
    """Flat key=value lines; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{ln}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _merge_config(args, parser_defaults) -> argparse.Namespace:
    """Apply config-file values under explicit CLI flags."""
    if not getattr(args, "config", None):
        return args
    fileconf = _load_config_file(args.config)
    for key, raw in fileconf.items():
        if not hasattr(args, key):
            raise ConfigurationError(f"unknown config key: {key}")
        if getattr(args, key) != parser_defaults.get(key):
            continue  # explicit flag wins
        current = parser_defaults.get(key)
        if isinstance(current, bool):
            value = raw.lower() in ("1", "true", "yes", "on")
        elif isinstance(current, int) and not isinstance(current, bool):
            value = int(raw)
        elif isinstance(current, float):
            value = float(raw)
        elif current is None:  # optional numerics (e.g. lambda_max)
            try:
                value = float(raw)
            except ValueError:
                value = raw
        else:
            value = raw
        setattr(args, key, value)
    return args


def _weight_config(args) -> WeightConfig:
    return WeightConfig(
        gamma=args.gamma,
        normalizer=args.normalizer,
        threshold_enabled=args.threshold,
        threshold_quantile=args.quantile,
        leaf_depth_limit=args.leaf_depth_limit,
    )


def _parse_int_list(text):
    if not text:
        return []
    return [int(x) for x in str(text).split(",") if x != ""]


def _lambda_grid(args, data, tree, weights):
    if args.lambda_max is not None:
        if args.lambda_max <= 0:
            raise ConfigurationError("--lambda-max must be > 0")
        T = args.lambda_count
        if args.spacing == "linear":
            return args.lambda_max * np.arange(1, T + 1) / T
        return np.geomspace(args.lambda_max * 1e-4, args.lambda_max, T)
    return auto_lambda_grid(data, tree, weights, args.lambda_count, spacing=args.spacing)


def cmd_generate(args) -> int:
    ds = generate(args.model, args.n, args.p, args.seed)
    write_csv(ds.data, args.out)
    return 0


def cmd_fit(args) -> int:
    data = read_csv(args.input)
    os.makedirs(args.outdir, exist_ok=True)
    timings = {}
    t0 = time.perf_counter()
    tree = build_euclidean_mst(data)
    timings["mst_seconds"] = time.perf_counter() - t0
    if data.n == 1:
        path_counts, lams = [1], [0.0]
        from .clusterpath import Dendrogram

        dend = Dendrogram(leaf_count=1)
        timings.update(weights_seconds=0.0, grid_seconds=0.0, fit_seconds=0.0)
    else:
        t0 = time.perf_counter()
        cfg = _weight_config(args)
        w = compute_weights(data, tree, cfg)
        timings["weights_seconds"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        lams = _lambda_grid(args, data, tree, w)
        timings["grid_seconds"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        path = fit_clusterpath(data, tree, w, lams)
        timings["fit_seconds"] = time.perf_counter() - t0
        dend = path.dendrogram
        path_counts = path.cluster_counts.tolist()
        lams = list(map(float, lams))
    timings["total_seconds"] = sum(timings.values())
    _write_json(os.path.join(args.outdir, "dendrogram.json"), dendrogram_to_dict(dend))
    _atomic_write(os.path.join(args.outdir, "dendrogram.newick"), dendrogram_to_newick(dend) + "\n")
    cut_files = {}
    label_acc = {}
    for k in _parse_int_list(args.cuts):
        labels = cut_dendrogram(dend, k)
        fname = f"labels_k{k}.csv"
        _write_labels(os.path.join(args.outdir, fname), labels)
        cut_files[str(k)] = fname
        if data.labels is not None:
            label_acc[str(k)] = accuracy(labels, data.labels)
    summary = {
        "command": "fit",
        "input": args.input,
        "n": data.n,
        "p": data.p,
        "gamma": args.gamma,
        "normalizer": args.normalizer,
        "threshold": bool(args.threshold),
        "spacing": args.spacing,
        "lambdas": lams,
        "cluster_counts": path_counts,
        "cuts": cut_files,
        "timings": timings,
    }
    if label_acc:
        summary["accuracy"] = label_acc
    _write_json(os.path.join(args.outdir, "summary.json"), summary)
    return 0


def _write_heatmap(path, matrix, row_order, col_order):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["row"] + [f"c{j}" for j in col_order])
    for i in row_order:
        w.writerow([i] + [FLOAT_FMT % v for v in matrix[i][col_order]])
    _atomic_write(path, buf.getvalue())


def cmd_bifit(args) -> int:
    data = read_csv(args.input)
    os.makedirs(args.outdir, exist_ok=True)
    t0 = time.perf_counter()
    cfg = default_config(
        data,
        mode="bicluster",
        T=args.steps,
        ratio=args.ratio,
        weight_cfg=_weight_config(args),
        tolerance=args.tolerance,
        max_inner=args.max_inner,
    )
    setup_seconds = time.perf_counter() - t0
    snaps = _parse_int_list(args.snapshots)
    t0 = time.perf_counter()
    result = fit_bicluster(data, cfg, snapshot_indices=snaps)
    fit_seconds = time.perf_counter() - t0
    _write_json(os.path.join(args.outdir, "row_dendrogram.json"),
                dendrogram_to_dict(result.row_dendrogram))
    _write_json(os.path.join(args.outdir, "col_dendrogram.json"),
                dendrogram_to_dict(result.col_dendrogram))
    _atomic_write(os.path.join(args.outdir, "row_dendrogram.newick"),
                  dendrogram_to_newick(result.row_dendrogram) + "\n")
    _atomic_write(os.path.join(args.outdir, "col_dendrogram.newick"),
                  dendrogram_to_newick(result.col_dendrogram) + "\n")
    row_order = dendrogram_leaf_order(result.row_dendrogram)
    col_order = dendrogram_leaf_order(result.col_dendrogram)
    for t, snap in result.snapshots.items():
        _write_heatmap(os.path.join(args.outdir, f"heatmap_step{t}.csv"),
                       snap, row_order, col_order)
    cut_files = {}
    for k in _parse_int_list(args.cuts):
        labels = cut_dendrogram(result.row_dendrogram, k)
        fname = f"labels_k{k}.csv"
        _write_labels(os.path.join(args.outdir, fname), labels)
        cut_files[str(k)] = fname
    _write_json(os.path.join(args.outdir, "summary.json"), {
        "command": "bifit",
        "input": args.input,
        "n": data.n,
        "p": data.p,
        "schedule": [[float(a), float(b)] for a, b in cfg.schedule],
        "row_counts": result.row_counts.tolist(),
        "col_counts": result.col_counts.tolist(),
        "cuts": cut_files,
        "converged": bool(result.all_converged),
        "timings": {"setup_seconds": setup_seconds, "fit_seconds": fit_seconds},
    })
    return 0


def cmd_spfit(args) -> int:
    data = read_csv(args.input)
    os.makedirs(args.outdir, exist_ok=True)
    t0 = time.perf_counter()
    cfg = default_config(
        data,
        mode="sparse",
        T=args.steps,
        ratio=args.ratio,
        weight_cfg=_weight_config(args),
        tolerance=args.tolerance,
        max_inner=args.max_inner,
        sparse_gamma=args.sparse_gamma,
    )
    setup_seconds = time.perf_counter() - t0
    t0 = time.perf_counter()
    result = fit_sparse(data, cfg)
    fit_seconds = time.perf_counter() - t0
    _write_json(os.path.join(args.outdir, "row_dendrogram.json"),
                dendrogram_to_dict(result.row_dendrogram))
    _atomic_write(os.path.join(args.outdir, "row_dendrogram.newick"),
                  dendrogram_to_newick(result.row_dendrogram) + "\n")
    _write_json(os.path.join(args.outdir, "selected_features.json"), {
        "steps": [
            {"lambda": float(lam), "gamma": float(gam), "selected": sel.tolist()}
            for (lam, gam), sel in zip(cfg.schedule, result.selected_features)
        ],
    })
    cut_files = {}
    for k in _parse_int_list(args.cuts):
        labels = cut_dendrogram(result.row_dendrogram, k)
        fname = f"labels_k{k}.csv"
        _write_labels(os.path.join(args.outdir, fname), labels)
        cut_files[str(k)] = fname
    _write_json(os.path.join(args.outdir, "summary.json"), {
        "command": "spfit",
        "input": args.input,
        "n": data.n,
        "p": data.p,
        "schedule": [[float(a), float(b)] for a, b in cfg.schedule],
        "row_counts": result.row_counts.tolist(),
        "selected_final": result.selected_features[-1].tolist(),
        "cuts": cut_files,
        "converged": bool(result.all_converged),
        "timings": {"setup_seconds": setup_seconds, "fit_seconds": fit_seconds},
    })
    return 0


def cmd_cut(args) -> int:
    with open(args.dendrogram) as fh:
        dend = dendrogram_from_dict(json.load(fh))
    labels = cut_dendrogram(dend, args.k)
    _write_labels(args.out, labels)
    return 0


def cmd_export(args) -> int:
    with open(args.dendrogram) as fh:
        dend = dendrogram_from_dict(json.load(fh))
    if args.format == "newick":
        _atomic_write(args.out, dendrogram_to_newick(dend) + "\n")
    else:
        _write_json(args.out, dendrogram_to_dict(dend))
    return 0


def cmd_bench(args) -> int:
    models = [m for m in str(args.models).split(",") if m]
    sizes = _parse_int_list(args.sizes)
    rows = []
    for model in models:
        for n in sizes:
            cells = {"mst_seconds": [], "weights_seconds": [], "grid_seconds": [],
                     "fit_seconds": [], "total_seconds": []}
            p = None
            timed_out = False
            for rep in range(args.reps):
                t_start = time.perf_counter()
                ds = generate(model, n, args.p if model in ("MTC", "FS") else None,
                              seed=args.seed + rep)
                p = ds.data.p
                t0 = time.perf_counter()
                tree = build_euclidean_mst(ds.data)
                t_mst = time.perf_counter() - t0
                t0 = time.perf_counter()
                w = compute_weights(ds.data, tree, _weight_config(args))
                t_w = time.perf_counter() - t0
                t0 = time.perf_counter()
                lams = auto_lambda_grid(ds.data, tree, w, args.lambda_count,
                                        spacing=args.spacing)
                t_grid = time.perf_counter() - t0
                t0 = time.perf_counter()
                fit_clusterpath(ds.data, tree, w, lams)
                t_fit = time.perf_counter() - t0
                cells["mst_seconds"].append(t_mst)
                cells["weights_seconds"].append(t_w)
                cells["grid_seconds"].append(t_grid)
                cells["fit_seconds"].append(t_fit)
                cells["total_seconds"].append(time.perf_counter() - t_start)
                if args.timeout and time.perf_counter() - t_start > args.timeout:
                    timed_out = True
                    break
            med = {k: (FLOAT_FMT % float(np.median(v)) if v else "") for k, v in cells.items()}
            rows.append({
                "model": model, "n": n, "p": p, "T": args.lambda_count,
                "status": "timeout" if timed_out else "ok", **med,
            })
    buf = io.StringIO()
    fields = ["model", "n", "p", "T", "status", "mst_seconds", "weights_seconds",
              "grid_seconds", "fit_seconds", "total_seconds"]
    w = csv.DictWriter(buf, fieldnames=fields)
    w.writeheader()
    for row in rows:
        w.writerow(row)
    _atomic_write(args.out, buf.getvalue())
    return 0


def _add_weight_options(sp):
    sp.add_argument("--gamma", type=float, default=5.0, help="kernel bandwidth candidate")
    sp.add_argument("--normalizer", choices=["kappa", "tau", "none"], default="kappa")
    sp.add_argument("--threshold", action=argparse.BooleanOptionalAction, default=False,
                    help="floor small near-leaf edge weights at the weight quantile")
    sp.add_argument("--quantile", type=float, default=0.1)
    sp.add_argument("--leaf-depth-limit", type=int, default=50, dest="leaf_depth_limit")
    sp.add_argument("--config", help="flat key=value config file; flags override")


def build_parser():
    """Returns the parser plus per-command option defaults (for config merging)."""
    ap = argparse.ArgumentParser(
        prog="treefuse",
        description="Convex clustering over tree-structured fusion penalties.",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    command_defaults = {}

    g = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    g.add_argument("--model", required=True, choices=list(MODELS))
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--p", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit a clusterpath and write dendrogram artifacts")
    f.add_argument("--input", required=True, help="CSV with header; optional label column")
    f.add_argument("--outdir", required=True)
    _add_weight_options(f)
    f.add_argument("--lambda-count", type=int, default=100, dest="lambda_count")
    f.add_argument("--lambda-max", type=float, default=None, dest="lambda_max")
    f.add_argument("--spacing", choices=["linear", "geometric"], default="linear")
    f.add_argument("--cuts", default="", help="comma-separated cluster counts to export")
    f.set_defaults(func=cmd_fit)

    for name, fn in (("bifit", cmd_bifit), ("spfit", cmd_spfit)):
        b = sub.add_parser(name, help=f"{name}: row{'+column' if name == 'bifit' else ''} fusion run")
        b.add_argument("--input", required=True)
        b.add_argument("--outdir", required=True)
        _add_weight_options(b)
        b.add_argument("--steps", type=int, default=30)
        b.add_argument("--ratio", type=float, default=1.0,
                       help="gamma_t = ratio * lambda_t coupling")
        b.add_argument("--tolerance", type=float, default=1e-6)
        b.add_argument("--max-inner", type=int, default=500, dest="max_inner")
        b.add_argument("--cuts", default="")
        if name == "bifit":
            b.add_argument("--snapshots", default="",
                           help="schedule steps at which to export heatmap CSVs")
        else:
            b.add_argument("--sparse-gamma", type=float, default=None, dest="sparse_gamma",
                           help="hold the group penalty constant instead of ratio * lambda")
        b.set_defaults(func=fn)

    c = sub.add_parser("cut", help="cut a dendrogram JSON at k clusters")
    c.add_argument("--dendrogram", required=True)
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_cut)

    e = sub.add_parser("export", help="convert a dendrogram JSON to newick/json")
    e.add_argument("--dendrogram", required=True)
    e.add_argument("--format", choices=["newick", "json"], default="newick")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export)

    b = sub.add_parser("bench", help="timing table over models and sizes (CSV)")
    b.add_argument("--models", default="GM1")
    b.add_argument("--sizes", default="", help="comma-separated sample sizes")
    b.add_argument("--p", type=int, default=2, help="dimensions for MTC/FS")
    _add_weight_options(b)
    b.add_argument("--lambda-count", type=int, default=100, dest="lambda_count")
    b.add_argument("--spacing", choices=["linear", "geometric"], default="linear")
    b.add_argument("--reps", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--timeout", type=float, default=0.0,
                   help="per-cell soft timeout in seconds (0 = none)")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    for name, parser in sub.choices.items():
        command_defaults[name] = {
            a.dest: a.default for a in parser._actions if a.dest != "help"
        }
    return ap, command_defaults


def main(argv=None) -> int:
    ap, command_defaults = build_parser()
    args = ap.parse_args(argv)
    try:
        args = _merge_config(args, command_defaults[args.command])
        return args.func(args)
    except (InvalidDataError, ConfigurationError, FileNotFoundError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_INPUT
    except (NumericError, InvalidProblemError, InvalidStateError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return _EXIT_NUMERIC
    except TreefuseError as exc:  # future subclasses: never leak other exit codes
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
