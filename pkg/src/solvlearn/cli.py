"""Command-line interface.

Subcommands: pf (single power flow), label (label samples), pool (generate a
sample pool), train (passive training on a labeled CSV), al (active-learning
experiment), boundary (posterior grid from a checkpoint). Exit codes: 0 ok,
1 usage, 2 data/parse, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we reserve that for data errors
        self.print_usage(sys.stderr)
        raise SystemExit_(EXIT_USAGE, message)


class SystemExit_(Exception):
    def __init__(self, code: int, message: str = ""):
        self.code = code
        super().__init__(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="solvlearn", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_pf_flags(p):
        p.add_argument("--pf-tol", type=float, default=1e-8, help="mismatch tolerance, pu")
        p.add_argument("--pf-max-iter", type=int, default=20)
        p.add_argument("--pf-q-limits", type=lambda s: s.lower() not in ("0", "false", "no"),
                       default=True, metavar="BOOL", help="enforce generator Q limits")

    pf = sub.add_parser("pf", help="solve one power flow and print the solution")
    pf.add_argument("--case", required=True, help="MATPOWER-style case file")
    add_pf_flags(pf)

    label_p = sub.add_parser("label", help="label one sample or a CSV of samples")
    label_p.add_argument("--config", required=True, help="experiment config JSON")
    group = label_p.add_mutually_exclusive_group(required=True)
    group.add_argument("--values", help="comma-separated feature values (spec order)")
    group.add_argument("--csv", help="pool CSV to label")
    label_p.add_argument("--out", help="write labels CSV here instead of stdout")

    pool_p = sub.add_parser("pool", help="generate and export a sample pool")
    pool_p.add_argument("--config", required=True)
    pool_p.add_argument("--out", required=True)
    pool_p.add_argument("--n", type=int, help="override pool size")
    pool_p.add_argument("--seed", type=int, default=0)

    train_p = sub.add_parser("train", help="passive training on a labeled CSV")
    train_p.add_argument("--config", required=True)
    train_p.add_argument("--data", required=True, help="CSV: feature columns + final label column")
    train_p.add_argument("--out", required=True, help="checkpoint path (.npz)")

    al_p = sub.add_parser("al", help="run an active-learning experiment")
    al_p.add_argument("--config", required=True)
    al_p.add_argument("--seed", type=int, nargs="*", help="override config seeds")
    al_p.add_argument("--out-dir", help="override config output directory")

    boundary_p = sub.add_parser("boundary", help="export a posterior grid from a checkpoint")
    boundary_p.add_argument("--model", required=True, help="checkpoint from train/al")
    boundary_p.add_argument("--out", required=True)
    boundary_p.add_argument("--bounds", default="-3000,3000", help="lo,hi in MW")
    boundary_p.add_argument("--resolution", type=int, default=100)
    return parser


def _pf_config(args):
    from .powerflow import PfConfig

    return PfConfig(tol=args.pf_tol, max_iter=args.pf_max_iter, enforce_q_limits=args.pf_q_limits)


def _cmd_pf(args) -> int:
    from .matpower import parse_case_file
    from .powerflow import solve_newton

    net = parse_case_file(args.case)
    sol = solve_newton(net, _pf_config(args))
    print(f"converged: {sol.converged}  iterations: {sol.iterations}  "
          f"max mismatch: {sol.max_mismatch:.3e} pu")
    print(f"{'bus':>6} {'V (pu)':>10} {'theta (deg)':>12}")
    for bus, vm, va in zip(net.buses, sol.v_mag, sol.v_ang):
        print(f"{bus.id:>6} {vm:>10.6f} {math.degrees(va):>12.6f}")
    return EXIT_OK if sol.converged else EXIT_NUMERICAL


def _load_config(path: str):
    from .experiment import ExperimentConfig

    try:
        return ExperimentConfig.from_json(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise SystemExit_(EXIT_DATA, f"bad config {path}: {exc}") from exc


def _cmd_label(args) -> int:
    from .experiment import build_spec
    from .matpower import parse_case_file
    from .powerflow import label_batch
    from .sampling import FeatureMatrix, import_pool_csv

    cfg = _load_config(args.config)
    net = parse_case_file(cfg.case_file)
    spec = build_spec(cfg, net)
    if args.values is not None:
        values = np.array([float(v) for v in args.values.split(",")], dtype=float)
        pool = FeatureMatrix(values.reshape(1, -1), spec, seed=0)
    else:
        pool = import_pool_csv(args.csv, spec)
    labels = label_batch(net, pool, cfg.pf)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow((*spec.feature_names, "label"))
            for row, lab in zip(pool.rows, labels):
                writer.writerow([*(repr(float(v)) for v in row), lab.class_index])
        print(f"wrote {pool.n} labels to {args.out}")
    else:
        for row, lab in zip(pool.rows, labels):
            tag = "solvable" if lab.is_solvable else "non-solvable"
            print(f"{','.join(repr(float(v)) for v in row)} -> {lab.class_index} ({tag})")
    return EXIT_OK


def _cmd_pool(args) -> int:
    from .experiment import build_spec
    from .matpower import parse_case_file
    from .sampling import export_pool_csv, sample_pool

    cfg = _load_config(args.config)
    net = parse_case_file(cfg.case_file)
    spec = build_spec(cfg, net)
    n = args.n if args.n is not None else cfg.pool_size
    pool = sample_pool(spec, n, args.seed)
    export_pool_csv(pool, args.out)
    print(f"wrote {pool.n} x {spec.dimension} pool to {args.out}")
    return EXIT_OK


def _read_labeled_csv(path: str):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise SystemExit_(EXIT_DATA, f"{path}: last column must be 'label'")
        rows, labels = [], []
        for row in reader:
            rows.append([float(v) for v in row[:-1]])
            labels.append(int(row[-1]))
    return np.array(rows, dtype=float), np.array(labels, dtype=int)


def _cmd_train(args) -> int:
    from .mlp import MlpClassifier, save_model
    from .sampling import MinMaxNormalizer

    cfg = _load_config(args.config)
    X, y = _read_labeled_csv(args.data)
    normalizer = MinMaxNormalizer().fit(X)
    model = MlpClassifier(**cfg.train).fit(normalizer.transform(X), y)
    save_model(args.out, model, normalizer)
    print(f"trained on {X.shape[0]} rows; training accuracy "
          f"{model.score(normalizer.transform(X), y):.4f}; checkpoint at {args.out}")
    return EXIT_OK


def _cmd_al(args) -> int:
    from .experiment import run_experiment

    cfg = _load_config(args.config)
    overrides = {}
    if args.seed:
        overrides["seeds"] = tuple(args.seed)
    if args.out_dir:
        overrides["out_dir"] = args.out_dir
    if overrides:
        cfg = replace(cfg, **overrides)
    records = run_experiment(cfg)
    print(f"wrote {len(records)} metric records to {cfg.out_dir}/metrics.csv")
    return EXIT_OK


def _cmd_boundary(args) -> int:
    from .experiment import _write_boundary, export_boundary_grid
    from .mlp import load_model

    model, normalizer = load_model(args.model)
    if normalizer is None:
        raise SystemExit_(EXIT_DATA, f"{args.model} has no stored normalizer")
    lo, hi = (float(v) for v in args.bounds.split(","))
    grid = export_boundary_grid(model, normalizer, (lo, hi), args.resolution)
    _write_boundary(Path(args.out), grid)
    print(f"wrote {grid.shape[0]} grid rows to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "pf": _cmd_pf,
    "label": _cmd_label,
    "pool": _cmd_pool,
    "train": _cmd_train,
    "al": _cmd_al,
    "boundary": _cmd_boundary,
}


def main(argv=None) -> int:
    from .matpower import CaseError

    try:
        args = _build_parser().parse_args(argv)
    except SystemExit_ as exc:
        if str(exc):
            print(f"error: {exc}", file=sys.stderr)
        return exc.code
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except SystemExit_ as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except CaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
