"""Command-line entry point: ``sealtw <command> ...``.

Exit codes: 0 success, 1 runtime error, 2 validation error. Validation
failures print a JSON report on stderr; stdout carries only results.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (CsvFormatError, CsvParseError, Split, SyntheticSpec, generate, index_labels,
                   load_csv, read_csv, save_dataset, split_labeled)
from .hierarchy import (SpecStructureError, check_prob_vector, harden, load_tree, save_tree,
                        to_dot, validate_adjacency)
from .training import (ConfigError, TrainConfig, evaluate, fit, load_checkpoint,
                       metrics_record, save_checkpoint)
from .transport import oracle_agreement, relaxed_tree_wasserstein, rtw_knn, tree_wasserstein

log = logging.getLogger("sealtw")


class ValidationFailure(Exception):
    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or []


def _fail(message, details=None):
    raise ValidationFailure(message, details)


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        _fail(f"{path}: invalid JSON ({exc})")


def _load_valid_tree(path):
    try:
        spec = load_tree(path)
    except SpecStructureError as exc:
        _fail(f"{path}: {exc}")
    report = validate_adjacency(spec)
    if not report.ok:
        _fail(f"{path}: tree is invalid", [v.message for v in report.violations])
    return spec


def _load_vector(path, K):
    raw = _load_json(path)
    if isinstance(raw, dict):
        raw = raw.get("values")
    try:
        return check_prob_vector(np.asarray(raw, dtype=np.float64), K)
    except (ValueError, TypeError) as exc:
        _fail(f"{path}: {exc}")


# -- commands --------------------------------------------------------------

def cmd_distance(args):
    spec = _load_valid_tree(args.tree)
    mu = _load_vector(args.mu, spec.num_observed)
    nu = _load_vector(args.nu, spec.num_observed)
    if args.mode == "tw":
        if spec.soft:
            _fail("tw mode needs a hard tree; use --mode rtw for soft trees")
        d = tree_wasserstein(spec, mu, nu)
    else:
        d = relaxed_tree_wasserstein(spec, mu, nu)
    print(f"{d:.12f}")
    return 0


def cmd_oracle_check(args):
    if args.max_nodes > 32 or args.max_nodes < 2:
        _fail(f"--max-nodes must lie in [2, 32], got {args.max_nodes}")
    if args.trees < 0:
        _fail("--trees must be nonnegative")
    if args.trees == 0:
        log.warning("no trees requested; the check passes vacuously")
    report = oracle_agreement(args.trees, 0 if args.seed is None else args.seed, args.max_nodes)
    print(json.dumps(report))
    return 0 if report["passed"] else 1


def _training_data(args, config):
    if args.synthetic:
        spec = SyntheticSpec(**_load_json(args.synthetic))
        ds = generate(spec)
        if args.labels_per_class:
            ds = split_labeled(ds, args.labels_per_class, seed=config.seed)
        return ds
    if not args.data:
        _fail("provide --data CSV or --synthetic SPEC.json")
    ds = load_csv(args.data, args.test_data)
    if args.labels_per_class:
        ds = split_labeled(ds, args.labels_per_class, seed=config.seed)
    if args.unlabeled:
        Xu, _, _ = read_csv(args.unlabeled, require_label=False)
        if Xu.shape[1] != ds.feature_dim:
            _fail(f"{args.unlabeled}: {Xu.shape[1]} features, expected {ds.feature_dim}")
        X = np.concatenate([ds.unlabeled.X, Xu])
        y = np.concatenate([ds.unlabeled.y, np.full(len(Xu), -1)])
        ds = replace(ds, unlabeled=Split(X, y))
    return ds


def cmd_train(args):
    try:
        raw = _load_json(args.config) if args.config else {}
        if args.seed is not None:
            raw = {**raw, "seed": args.seed}
        config = TrainConfig.from_dict(raw)
    except ConfigError as exc:
        _fail("invalid config", exc.errors)
    ds = _training_data(args, config)
    tree = _load_valid_tree(args.tree) if args.tree else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": __version__,
        "mode": args.mode,
        "config": config.to_dict(),
        "seeds": {"train": config.seed},
        "inputs": {k: getattr(args, k) for k in ("config", "data", "test_data", "unlabeled",
                                                  "synthetic", "tree", "labels_per_class")},
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "finished": None,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    with open(out / "metrics.jsonl", "w") as fh:
        def callback(step, br, state):
            fh.write(json.dumps(metrics_record(step, br)) + "\n")
        result = fit(ds, config, mode=args.mode, spec=tree, callback=callback)
    state = result.state
    summary = {"steps": state.step}
    if len(ds.test.y):
        ev = evaluate(state.model, *ds.test, spec=state.spec)
        summary["test"] = asdict(ev)
    save_checkpoint(out / "checkpoint.json", state, config,
                    extra={"class_names": list(ds.class_names)})
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    log.info("wrote %s", out)
    print(json.dumps(summary))
    return 0


def cmd_extract_tree(args):
    try:
        _, spec, _ = load_checkpoint(args.checkpoint)
    except (ValueError, OSError, SpecStructureError) as exc:
        _fail(f"{args.checkpoint}: invalid checkpoint ({exc})")
    hard = harden(spec)
    report = validate_adjacency(hard)
    if not report.ok:
        _fail(f"{args.checkpoint}: extracted tree is invalid", [v.message for v in report.violations])
    dot = to_dot(hard)
    if args.out:
        Path(args.out).write_text(dot)
    else:
        sys.stdout.write(dot)
    if args.json:
        save_tree(hard, args.json)
    return 0


def _prob_rows(path, K, require_label):
    X, labels, _ = read_csv(path, require_label=require_label)
    if X.shape[1] != K:
        _fail(f"{path}: {X.shape[1]} probability columns, tree has {K} observed labels")
    for i, row in enumerate(X):
        try:
            check_prob_vector(row, K)
        except ValueError as exc:
            _fail(f"{path}:{i + 2}: {exc}")
    return X, labels


def cmd_knn(args):
    spec = _load_valid_tree(args.tree)
    K = spec.num_observed
    X, labels = _prob_rows(args.train, K, True)
    Q, _ = _prob_rows(args.query, K, False)
    if args.k < 1 or args.k > len(X):
        _fail(f"--k must lie in [1, {len(X)}] (training size), got {args.k}")
    y, names = index_labels(labels)
    pred = rtw_knn(spec, X, y, Q, args.k) if len(Q) else np.zeros(0, dtype=int)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(["row", "label"])
        for i, p in enumerate(pred):
            writer.writerow([i, names[p]])
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_gen_data(args):
    params = _load_json(args.spec) if args.spec else {}
    if args.seed is not None:
        params["seed"] = args.seed
    try:
        spec = SyntheticSpec(**params)
    except TypeError as exc:
        _fail(f"invalid synthetic spec: {exc}")
    if spec.errors():
        _fail("invalid synthetic spec", spec.errors())
    ds = generate(spec)
    if args.labels_per_class:
        ds = split_labeled(ds, args.labels_per_class, seed=spec.seed)
    out = save_dataset(ds, args.out)
    (out / "synthetic_spec.json").write_text(json.dumps(asdict(spec), indent=2))
    print(json.dumps({"out": str(out), "classes": ds.num_classes,
                      "labeled": int(len(ds.labeled.y)), "unlabeled": int(len(ds.unlabeled.y)),
                      "test": int(len(ds.test.y))}))
    return 0


# -- parser ----------------------------------------------------------------

def _common(default):
    # subcommands use SUPPRESS so flags given before the command survive
    c = argparse.ArgumentParser(add_help=False)
    c.add_argument("--seed", type=int, default=None if default else argparse.SUPPRESS,
                   help="override the random seed")
    c.add_argument("--quiet", action="store_true", default=False if default else argparse.SUPPRESS,
                   help="only print results and errors")
    return c


def build_parser():
    common = _common(False)
    p = argparse.ArgumentParser(prog="sealtw", description=__doc__.splitlines()[0],
                                parents=[_common(True)])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("distance", parents=[common], help="TW or RTW distance between two vectors")
    s.add_argument("tree")
    s.add_argument("mu")
    s.add_argument("nu")
    s.add_argument("--mode", choices=["tw", "rtw"], default="tw")
    s.set_defaults(func=cmd_distance)

    s = sub.add_parser("oracle-check", parents=[common], help="closed form vs exact LP on random trees")
    s.add_argument("--trees", type=int, default=200)
    s.add_argument("--max-nodes", type=int, default=20)
    s.set_defaults(func=cmd_oracle_check)

    s = sub.add_parser("train", parents=[common], help="train a classifier with SEAL")
    s.add_argument("config", nargs="?", help="TrainConfig JSON")
    s.add_argument("--data", help="labeled CSV (feature columns + label)")
    s.add_argument("--test-data", help="test CSV")
    s.add_argument("--unlabeled", help="unlabeled CSV (label column optional)")
    s.add_argument("--synthetic", help="SyntheticSpec JSON to generate data from")
    s.add_argument("--labels-per-class", type=int, help="keep this many labels per class")
    s.add_argument("--tree", help="prior tree JSON (default: random soft prior)")
    s.add_argument("--mode", choices=["supervised", "semisup"], default="supervised")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("extract-tree", parents=[common], help="harden a learned hierarchy to DOT")
    s.add_argument("checkpoint")
    s.add_argument("--out", help="DOT file (default stdout)")
    s.add_argument("--json", help="also write the hard tree JSON here")
    s.set_defaults(func=cmd_extract_tree)

    s = sub.add_parser("knn", parents=[common], help="kNN labels under RTW")
    s.add_argument("tree")
    s.add_argument("train")
    s.add_argument("query")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--out", help="CSV file (default stdout)")
    s.set_defaults(func=cmd_knn)

    s = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    s.add_argument("--spec", help="SyntheticSpec JSON (defaults otherwise)")
    s.add_argument("--labels-per-class", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ValidationFailure as exc:
        sys.stderr.write(json.dumps({"error": str(exc), "details": exc.details}) + "\n")
        return 2
    except (CsvParseError, CsvFormatError) as exc:
        sys.stderr.write(json.dumps({"error": str(exc), "line": getattr(exc, "line", None),
                                     "column": getattr(exc, "column", None)}) + "\n")
        return 2
    except (OSError, RuntimeError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
