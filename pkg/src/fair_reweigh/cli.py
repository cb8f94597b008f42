"""Command-line entry point.

    fair-reweigh prepare --dataset german --out runs/german
    fair-reweigh reweigh --dataset-dir runs/german --notion eop --beta 0 --gamma 0 --out runs/german/eop
    fair-reweigh grid    --dataset-dir runs/german --notion eop --out runs/german/grid
    fair-reweigh diag loo --dataset german --n 100 --out runs/german/loo

Exit codes: 0 success, 2 usage or data error, 70 internal invariant violation.
Every command writes one manifest JSON next to its outputs.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import os
import platform
import sys
import time

import numpy as np

from . import __version__, data, diag, model, pipeline
from .influence import FairnessNotion
from .io import atomic_write_text, sha256_file

EXIT_OK, EXIT_USAGE, EXIT_INTERNAL = 0, 2, 70


class InvariantViolation(RuntimeError):
    pass


def _error(kind, message, **extra):
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)


def _versions():
    import pandas
    import scipy

    return {"fair_reweigh": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pandas": pandas.__version__}


class Manifest:
    """Collects inputs/outputs of one command and writes a new manifest file (never overwrites)."""

    def __init__(self, command, args, out_dir):
        self.command = command
        self.out_dir = out_dir
        self.started = time.time()
        self.doc = {
            "command": command,
            "argv": sys.argv[1:],
            "args": {k: v for k, v in vars(args).items() if k != "func"},
            "started_at": dt.datetime.now(dt.timezone.utc).isoformat(),
            "inputs": {},
            "outputs": {},
            "versions": _versions(),
        }

    def input(self, path):
        if path and os.path.isfile(path):
            self.doc["inputs"][path] = sha256_file(path)

    def output(self, path):
        self.doc["outputs"][path] = sha256_file(path)

    def write(self, **extra) -> str:
        self.doc.update(extra)
        self.doc["wall_clock_seconds"] = time.time() - self.started
        os.makedirs(self.out_dir, exist_ok=True)
        k = 0
        while True:
            path = os.path.join(self.out_dir, f"manifest-{self.command}-{k:04d}.json")
            if not os.path.exists(path):
                break
            k += 1
        atomic_write_text(path, json.dumps(self.doc, indent=2, sort_keys=True, default=str) + "\n")
        return path


def verify_manifest(path) -> list[str]:
    """Paths whose current checksum no longer matches the manifest (empty if all good)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    bad = []
    for p, digest in {**doc["inputs"], **doc["outputs"]}.items():
        if not os.path.isfile(p) or sha256_file(p) != digest:
            bad.append(p)
    return bad


# -- dataset resolution --------------------------------------------------------

def _load(args, manifest):
    """Splits, metadata and default l2 from --dataset-dir or --dataset."""
    if getattr(args, "dataset_dir", None):
        prepared = data.load_prepared(args.dataset_dir)
        for role in data.ROLES:
            manifest.input(os.path.join(args.dataset_dir, f"{role}.csv"))
        manifest.input(os.path.join(args.dataset_dir, "metadata.json"))
    elif getattr(args, "dataset", None):
        cfg = data.builtin_config(args.dataset, args.raw_dir, seed=args.seed)
        for src in ([cfg.source] if isinstance(cfg.source, str) else cfg.source):
            manifest.input(cfg.resolve(src))
        prepared = data.load_dataset(args.dataset, cfg)
        prepared.metadata["dataset"] = args.dataset
        prepared.metadata["l2_total"] = data.DEFAULT_L2[args.dataset]
    else:
        raise data.DataError("usage", "give --dataset-dir or --dataset")
    l2 = args.l2 if args.l2 is not None else prepared.metadata.get("l2_total")
    if l2 is None:
        raise data.DataError("usage", "no --l2 given and the dataset has no default")
    return prepared, float(l2)


def _write_weights(path, w_star):
    rows = ["index,w,effective_weight"]
    rows += [f"{i},{w!r},{1.0 - w!r}" for i, w in enumerate(np.asarray(w_star).tolist())]
    atomic_write_text(path, "\n".join(rows) + "\n")


def _save_run(result: pipeline.PipelineResult, prepared, out, manifest):
    os.makedirs(out, exist_ok=True)
    names = prepared.train.feature_names
    paths = {
        "weights": os.path.join(out, "weights.csv"),
        "base_model": os.path.join(out, "base_model.json"),
        "reweighed_model": os.path.join(out, "reweighed_model.json"),
        "metrics": os.path.join(out, "metrics.json"),
    }
    _write_weights(paths["weights"], result.w_star)
    model.save_model(paths["base_model"], result.base_params, names)
    model.save_model(paths["reweighed_model"], result.reweighed_params, names)
    atomic_write_text(paths["metrics"], json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    if result.table is not None:
        paths["influence"] = os.path.join(out, "influence.csv")
        result.table.to_csv(paths["influence"])
        paths["lp"] = os.path.join(out, "weights.lp")
        spec = (pipeline.lp.relaxed_spec(result.table, result.config.beta, result.config.gamma)
                if result.lp_branch == "relaxed" else pipeline.lp.budgeted_spec(result.table, result.config.alpha))
        atomic_write_text(paths["lp"], spec.to_lp_format(result.lp_branch))
    for p in paths.values():
        manifest.output(p)
    return paths


def _check_run(result, prepared, cfg):
    if result.lp_outcome is not None:
        if not result.lp_outcome.optimal:
            raise InvariantViolation("LP outcome is not optimal")
        if np.any(result.lp_outcome.residuals > pipeline.lp.FEAS_TOL):
            raise InvariantViolation(f"LP residuals {result.lp_outcome.residuals} exceed tolerance")
    gn = model.grad_norm(prepared.train, 1.0 - result.w_star, result.reweighed_params)
    if gn > model.TRAIN_TOL:
        raise InvariantViolation(f"retrained model not at first-order optimum (|grad|={gn:.3e})")


def _verdict(result):
    return "already fair" if result.already_fair else result.region


# -- commands --------------------------------------------------------------------

def cmd_prepare(args):
    manifest = Manifest("prepare", args, args.out)
    if args.config:
        cfg = data.IngestConfig.from_json(args.config)
        manifest.input(args.config)
        name = None
    else:
        cfg = data.builtin_config(args.dataset, args.raw_dir)
        name = args.dataset
    if args.seed is not None:
        cfg.seed = args.seed
    for src in ([cfg.source] if isinstance(cfg.source, str) else (cfg.source or [])):
        manifest.input(cfg.resolve(src))
    prepared = data.load_dataset(name or args.config, cfg)
    if name:
        prepared.metadata["dataset"] = name
        prepared.metadata["l2_total"] = data.DEFAULT_L2[name]
    for p in data.save_prepared(prepared, args.out):
        manifest.output(p)
    m = prepared.metadata
    manifest.write(sizes=m["sizes"], d=m["d"], seed=m["seed"])
    print(json.dumps({"sizes": m["sizes"], "d": m["d"], "positive_rates": m["positive_rates"]}))
    return EXIT_OK


def cmd_reweigh(args):
    manifest = Manifest("reweigh", args, args.out)
    prepared, l2 = _load(args, manifest)
    cfg = pipeline.ReweighConfig(args.notion, args.beta, args.gamma, args.alpha, l2, args.seed)
    return _run_and_report(args, manifest, prepared, cfg)


def _run_and_report(args, manifest, prepared, cfg, **extra):
    result = pipeline.run(prepared.train, prepared.val, prepared.test, cfg)
    _check_run(result, prepared, cfg)
    paths = _save_run(result, prepared, args.out, manifest)
    manifest.write(config=cfg.to_dict(), lp_branch=result.lp_branch, verdict=_verdict(result),
                   metrics=result.summary()["test"], w_star_path=paths["weights"], **extra)
    print(f"verdict: {_verdict(result)}")
    return EXIT_OK


def _grid_from_file(path):
    with open(path, encoding="utf-8") as fh:
        g = json.load(fh)
    return {k: [float(v) for v in (g[k] if isinstance(g[k], list) else [g[k]])] for k in ("beta", "gamma", "alpha") if k in g}


def cmd_grid(args):
    manifest = Manifest("grid", args, args.out)
    prepared, l2 = _load(args, manifest)
    grids = _grid_from_file(args.grid) if args.grid else None
    manifest.input(args.grid)
    gr = pipeline.grid_search(prepared.train, prepared.val, args.notion, grids, l2, args.tol_acc, args.seed)
    os.makedirs(args.out, exist_ok=True)
    grid_csv = os.path.join(args.out, "grid.csv")
    cols = ["beta", "gamma", "alpha", "lp_branch", "w_sum", "val_accuracy", "val_gap", "improvement", "accuracy_ok"]
    lines = [",".join(cols)] + [",".join(str(r[c]) for c in cols) for r in gr.rows]
    atomic_write_text(grid_csv, "\n".join(lines) + "\n")
    manifest.output(grid_csv)
    sel = gr.config
    print(f"selected: beta={sel.beta} gamma={sel.gamma} alpha={sel.alpha}" + (" (fallback)" if gr.fallback else ""))
    return _run_and_report(args, manifest, prepared, sel, selected={"beta": sel.beta, "gamma": sel.gamma,
                           "alpha": sel.alpha, "fallback": gr.fallback})


def cmd_diag(args):
    manifest = Manifest(f"diag-{args.study}", args, args.out)
    prepared, l2 = _load(args, manifest)
    train, val = prepared.train, prepared.val
    notion = "eop" if args.study == "flip" else args.notion
    oracle = diag.Oracle(train, val, notion, l2)
    if args.study == "loo":
        study = diag.loo_study(train, val, args.n, notion, args.seed, l2, oracle=oracle)
    elif args.study == "group":
        study = diag.group_study(train, val, args.group_size, args.n_groups, notion, args.seed, l2, oracle=oracle)
    elif args.study == "epsilon":
        study = diag.epsilon_study(train, val, args.n, tuple(args.epsilon), notion, args.seed, l2, oracle=oracle)
    else:
        study = diag.flip_study(train, val, args.n, args.seed, l2, oracle=oracle)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, f"{args.study}.csv")
    json_path = os.path.join(args.out, f"{args.study}.json")
    study.write(csv_path, json_path, extra={"notion": notion, "seed": args.seed, "l2_total": l2})
    manifest.output(csv_path)
    manifest.output(json_path)
    manifest.write(summary=study.summary())
    print(json.dumps(study.summary(), sort_keys=True))
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------

def _dataset_args(p, seed_default=42):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset-dir", help="directory written by `prepare`")
    src.add_argument("--dataset", choices=sorted(data.BUILTIN), help="built-in benchmark, prepared on the fly")
    p.add_argument("--raw-dir", default=None, help="location of raw benchmark files")
    p.add_argument("--l2", type=float, default=None, help="total L2 strength (default: dataset's table value)")
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--out", required=True)


def _notion(p):
    p.add_argument("--notion", type=FairnessNotion.parse, default=FairnessNotion.EOP, choices=list(FairnessNotion),
                   help="eop or dp")


def build_parser():
    parser = argparse.ArgumentParser(prog="fair-reweigh", description="Influence-based fairness reweighing.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest, split and standardize a dataset")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", choices=sorted(data.BUILTIN))
    src.add_argument("--config", help="JSON ingestion config for a custom CSV")
    p.add_argument("--raw-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("reweigh", help="run the reweighing pipeline once")
    _dataset_args(p)
    _notion(p)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--alpha", type=float, default=0.1)
    p.set_defaults(func=cmd_reweigh)

    p = sub.add_parser("grid", help="grid-search beta/gamma/alpha on validation, then run the pipeline")
    _dataset_args(p)
    _notion(p)
    p.add_argument("--grid", help="JSON file with beta/gamma/alpha lists")
    p.add_argument("--tol-acc", type=float, default=0.0)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("diag", help="retraining studies of influence accuracy")
    p.add_argument("study", choices=["loo", "group", "flip", "epsilon"])
    _dataset_args(p)
    _notion(p)
    p.add_argument("--n", type=int, default=100, help="samples for loo/flip/epsilon")
    p.add_argument("--group-size", type=int, default=60)
    p.add_argument("--n-groups", type=int, default=50)
    p.add_argument("--epsilon", type=float, nargs="+", default=[1e-2, 1e-3, 1e-4])
    p.set_defaults(func=cmd_diag)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except data.DataError as exc:
        extra = {"column": exc.column} if exc.column else {}
        _error(exc.kind, str(exc), **extra)
        return EXIT_USAGE
    except (ValueError, FileNotFoundError) as exc:
        _error("usage", str(exc))
        return EXIT_USAGE
    except (InvariantViolation, RuntimeError) as exc:
        _error("internal", str(exc))
        return EXIT_INTERNAL


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
