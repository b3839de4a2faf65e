"""Command line: ``vicscore {rank,build,score,synth}``.

Exit codes: 0 success, 1 usage/config, 2 data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from . import pipeline
from .errors import ConfigError, VicScoreError


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML/JSON pipeline config")
    p.add_argument("--out", help="artifact directory (overrides config 'out')")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads; results do not depend on this (default: all cores)")
    p.add_argument("--force", action="store_true", help="overwrite existing artifacts")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vicscore", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rank", help="rank candidate variables (ShapleyVIC or random forest)")
    _common(p)
    p.add_argument("--method", choices=["shapleyvic", "random_forest"])

    p = sub.add_parser("build", help="parsimony curve, scoring table and test evaluation")
    _common(p)
    p.add_argument("--final-m", type=int, help="number of variables in the final score")

    p = sub.add_parser("score", help="append total points to each row of a data file")
    p.add_argument("--table", required=True, help="scoring_table.csv from 'build'")
    p.add_argument("--data", required=True, help="delimited data file with a header row")
    p.add_argument("--output", help="write here instead of stdout")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("synth", help="write a synthetic cohort (data.csv, schema.yaml, spec.yaml)")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", help="generator spec (default: built-in 20-variable spec)")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--force", action="store_true")
    return parser


def _run(args) -> int:
    if args.command in ("rank", "build"):
        over = {"out": args.out, "seed": args.seed}
        if args.command == "rank":
            over["method"] = args.method
        else:
            over["final_m"] = args.final_m
        cfg = pipeline.load_config(args.config, **over)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.command == "rank":
            s = pipeline.cmd_rank(cfg, args.threads, args.force)
            if s["method"] == "shapleyvic":
                print(f"{s['n_excluded']} of {s['n_candidates']} variables had non-significant "
                      f"overall importance and were excluded")
            print("ranking: " + ", ".join(s["order"]))
        else:
            ev = pipeline.cmd_build(cfg, args.threads, args.force)
            t = ev["test"]
            print(f"suggested m = {ev['suggested_m']}, final m = {ev['final_m']}: {', '.join(ev['variables'])}")
            print(f"test AUC {t['auc']:.3f} (95% CI {t['ci_low']:.3f}-{t['ci_high']:.3f})")
            if "lace_test" in ev:
                print(f"LACE test AUC {ev['lace_test']['auc']:.3f}")
        return 0
    if args.command == "score":
        if args.output and os.path.exists(args.output) and not args.force:
            raise ConfigError(f"{args.output} exists; pass --force to overwrite")
        header, rows, problems = pipeline.score_file(args.table, args.data, args.delimiter)
        if problems:
            for msg in problems:
                print(f"error: {msg}", file=sys.stderr)
            return 2
        fh = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
        try:
            w = csv.writer(fh, delimiter=args.delimiter, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        finally:
            if args.output:
                fh.close()
        return 0
    if args.command == "synth":
        data, schema = pipeline.cmd_synth(args.out, args.spec, args.seed, args.n, args.force)
        print(f"wrote {data} and {schema}")
        return 0
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except VicScoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
