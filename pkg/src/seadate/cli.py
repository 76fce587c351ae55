"""Command-line interface: ``seadate <command> ...``.

Machine-readable JSON goes to stdout, one document per line; progress,
tables and error messages go to stderr. Exit codes: 0 success, 1 invalid
input or configuration, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from . import checks
from .config import load_config
from .errors import CorruptionError, DimensionError, NumericalError, SeaDateError
from .experiment import ablation_run, eval_run, load_split, train_run, write_json
from .synth import write_dataset

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2

log = logging.getLogger("seadate")


def emit(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _config(args):
    return load_config(args.config, args.set)


def cmd_gen_data(args):
    cfg = _config(args)
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "config.json"))
    result = {}
    for split, count, start in (("train", cfg.train_count, 0), ("test", cfg.test_count, cfg.train_count)):
        ds = write_dataset(cfg.gen, count, os.path.join(args.out, split), start=start)
        result[split] = {"count": len(ds), "start": start, "stats": ds.manifest["stats"]}
        log.info("wrote %d %s samples to %s", len(ds), split, ds.directory)
    emit(result)
    return EXIT_OK


def cmd_gradcheck(args):
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_json(os.path.join(args.out, "config.json"), {"scope": args.scope, "seed": args.seed})
    t0 = time.time()
    results = checks.run_scope(args.scope, seed=args.seed)
    rows = []
    for suite, reports in results.items():
        print(f"[{suite}]", file=sys.stderr)
        for r in reports:
            print("  " + r.line(), file=sys.stderr)
            rows.append({"suite": suite, "op": r.op, "max_rel_error": r.max_rel_error, "tol": r.tol,
                         "passed": bool(r.passed), "diagnostic": r.diagnostic})
    passed = all(r["passed"] for r in rows)
    doc = {"scope": args.scope, "passed": passed, "seconds": round(time.time() - t0, 2), "results": rows}
    print(f"{sum(r['passed'] for r in rows)}/{len(rows)} checks passed", file=sys.stderr)
    if args.out:
        write_json(os.path.join(args.out, "gradcheck.json"), doc)
    emit(doc)
    return EXIT_OK if passed else EXIT_NUMERICAL


def cmd_train(args):
    cfg = _config(args)
    train_ds = load_split(args.data, "train")
    summary, _ = train_run(cfg, train_ds, args.out)
    emit(summary)
    return EXIT_OK


def cmd_eval(args):
    ds = load_split(args.data, args.split)
    doc = eval_run(args.checkpoint, ds, args.out, args.conf_thresh, args.nms_iou, args.input_mode)
    emit({k: doc[k] for k in ("map50", "map75", "map", "images")})
    return EXIT_OK


def cmd_ablate(args):
    cfg = _config(args)
    train_ds = load_split(args.data, "train")
    test_ds = load_split(args.data, "test")
    only = [c.strip() for c in args.cells.split(",") if c.strip()] if args.cells else None
    emit(ablation_run(cfg, train_ds, test_ds, args.out, only))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="seadate", description="Dual-attention fusion detector toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. train.lr=0.003 (repeatable)")

    g = sub.add_parser("gen-data", help="write train/ and test/ synthetic splits")
    with_config(g)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    g.add_argument("--scope", choices=checks.SCOPES, default="all")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="also write gradcheck.json here")
    g.set_defaults(func=cmd_gradcheck)

    g = sub.add_parser("train", help="train a detector")
    with_config(g)
    g.add_argument("--data", required=True, help="dataset root or train split directory")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("eval", help="evaluate a checkpoint")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--data", required=True, help="dataset root or split directory")
    g.add_argument("--split", default="test", help="split to use when --data is a root (default: test)")
    g.add_argument("--out", required=True)
    g.add_argument("--conf-thresh", type=float)
    g.add_argument("--nms-iou", type=float)
    g.add_argument("--input-mode", choices=("both", "rgb", "ir"))
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("ablate", help="train and evaluate the ablation grid")
    with_config(g)
    g.add_argument("--data", required=True, help="dataset root holding train/ and test/")
    g.add_argument("--out", required=True)
    g.add_argument("--cells", help="comma-separated subset of cells to run")
    g.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SeaDateError, DimensionError, CorruptionError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
