"""Command-line interface: ``ksdtest {test, simulate-null, simulate-power, selfcheck}``.

Exit codes for ``test``: 0 when the null is kept, 1 when it is rejected,
2 on any input or runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from .bootstrap import SCHEMES
from .estimation import EstimationError, EstimatorSpec
from .kernel import KernelConfig
from .simulation import StudyConfig, run_study, svg_chart
from .testing import SCHEMA_VERSION, run_test

EXIT_ACCEPT, EXIT_REJECT, EXIT_ERROR = 0, 1, 2


class InputError(ValueError):
    pass


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_sample(path) -> np.ndarray:
    """Read a comma-separated numeric file with an optional header line.

    Rows are numbered by file line (1-based), so a header is row 1. Blank
    lines are skipped.
    """
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    except (UnicodeDecodeError, csv.Error) as exc:
        raise InputError(f"cannot parse {path}: {exc}") from exc
    rows, width = [], None
    for lineno, cells in enumerate(lines, start=1):
        cells = [c.strip() for c in cells]
        if not cells or all(c == "" for c in cells):
            continue
        if lineno == 1 and not any(_is_number(c) for c in cells):
            continue  # header
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise InputError(f"row {lineno}: expected {width} columns, found {len(cells)}")
        vals = []
        for col, cell in enumerate(cells, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"row {lineno}, column {col}: cannot parse {cell!r} as a number") from None
            if not np.isfinite(v):
                raise InputError(f"row {lineno}, column {col}: non-finite value {cell!r}")
            vals.append(v)
        rows.append(vals)
    if len(rows) < 2:
        raise InputError(f"need at least 2 data rows, found {len(rows)}")
    return np.array(rows, dtype=float)


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _schemes(text: str) -> tuple:
    out = tuple(s.strip() for s in text.split(","))
    for s in out:
        if s not in SCHEMES:
            raise argparse.ArgumentTypeError(f"unknown scheme {s!r}; choose from {', '.join(SCHEMES)}")
    return out


def _emit(text: str, out) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_test(args) -> int:
    X = read_sample(args.data)
    if args.d is not None and X.shape[1] != args.d:
        raise InputError(f"data has {X.shape[1]} columns, --d says {args.d}")
    cfg = KernelConfig(args.c, X.shape[1])
    res = run_test(X, cfg, EstimatorSpec(kind=args.estimator), B=args.b, gamma=args.gamma,
                   seed=args.seed, scheme=args.scheme)
    d = res.to_dict()
    if args.format == "json":
        text = json.dumps(d, indent=2) + "\n"
    else:
        flat = {k: (json.dumps(v) if isinstance(v, (dict, list)) else v) for k, v in d.items()}
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(flat), lineterminator="\n")
        w.writeheader()
        w.writerow(flat)
        text = buf.getvalue()
    _emit(text, args.out)
    return EXIT_REJECT if res.reject else EXIT_ACCEPT


def cmd_simulate(args, study: str) -> int:
    cfg = StudyConfig(
        study=study, d=args.d, n=args.n, reps=args.reps, B=args.b, gamma=args.gamma, c=args.c,
        mu=args.mu if study == "power" else 0.0, schemes=args.scheme, estimator=args.estimator,
        seed=args.seed, out=args.out,
    )
    res = run_study(cfg, workers=args.workers)
    if args.format == "csv":
        text = res.to_csv(timing=args.timing)
    else:
        cells = []
        for c in res.cells:
            cells.append({
                "scheme": c.scheme, "d": c.d, "n": c.n, "mu": c.mu, "c": c.c, "B": c.B, "gamma": c.gamma,
                "R": c.R, "rejections": c.rejections,
                "rate": None if c.rejections is None else c.rate,
                "se": None if c.rejections is None else c.se,
                "seconds_per_rep": c.seconds_per_rep if args.timing else None, "error": c.error,
            })
        text = json.dumps({"schema": SCHEMA_VERSION, "study": study, "seed": args.seed, "cells": cells},
                          indent=2) + "\n"
    _emit(text, args.out)
    if args.svg:
        with open(args.svg, "w", encoding="utf-8") as fh:
            fh.write(svg_chart(res))
    failed = [c for c in res.cells if c.error]
    for c in failed:
        print(f"cell scheme={c.scheme} n={c.n} aborted: {c.error}", file=sys.stderr)
    return EXIT_ERROR if failed else 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_all

    ok = True
    for name, passed, detail in run_all(seed=args.seed):
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok &= passed
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ksdtest", description="Composite KSD goodness-of-fit test for Gaussian models.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, c_default):
        sp.add_argument("--b", type=int, default=200, help="bootstrap replications (default 200)")
        sp.add_argument("--gamma", type=float, default=0.05, help="test size (default 0.05)")
        sp.add_argument("--c", type=float, default=c_default, help=f"bandwidth factor, ell = c sqrt(d) (default {c_default})")
        sp.add_argument("--estimator", choices=["moment", "min_ksd"], default="moment")
        sp.add_argument("--out", help="output file (default stdout)")

    t = sub.add_parser("test", help="test a CSV sample against the Gaussian family")
    t.add_argument("--data", required=True, help="CSV file, one observation per row")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--d", type=int, default=None, help="expected number of columns")
    t.add_argument("--scheme", choices=SCHEMES, default="corrected")
    t.add_argument("--format", choices=["json", "csv"], default="json")
    common(t, 0.2)

    for name, study, n_default, c_default in (
        ("simulate-null", "null", (200,), 0.2),
        ("simulate-power", "power", (100, 200, 300), 1.0),
    ):
        s = sub.add_parser(name, help=f"Monte Carlo {'level' if study == 'null' else 'power'} study")
        s.add_argument("--seed", type=int, required=True, help="master seed (required)")
        s.add_argument("--d", type=int, default=1)
        s.add_argument("--n", type=_ints, default=n_default, help="comma-separated sample sizes")
        s.add_argument("--reps", type=int, default=300)
        s.add_argument("--scheme", type=_schemes, default=("corrected",), help="comma-separated schemes")
        s.add_argument("--workers", type=int, default=None, help="worker processes (default all cores)")
        s.add_argument("--format", choices=["csv", "json"], default="csv")
        s.add_argument("--svg", help="also write a rate-vs-n SVG chart here")
        s.add_argument("--timing", action="store_true", help="fill seconds_per_rep (output no longer reproducible)")
        if study == "power":
            s.add_argument("--mu", type=float, default=2.0, help="mixture separation (default 2)")
        common(s, c_default)

    sc = sub.add_parser("selfcheck", help="run the numerical invariant checks")
    sc.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "test":
            return cmd_test(args)
        if args.command == "selfcheck":
            return cmd_selfcheck(args)
        return cmd_simulate(args, "null" if args.command == "simulate-null" else "power")
    except (InputError, EstimationError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
