"""Command line entry point: ``ddopt {validate,gen,solve,eval,bench}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bundle as B
from .evaluator import MissingTestingSamples, evaluate_decision, summary_table
from .paradigms import ParadigmConfig
from .pipeline import (DEFAULT_PARADIGMS, RunConfig, generate_problem, read_record, run_bench,
                       solve_problem, write_record, write_report)
from .sampler import FAMILIES, GeneratorConfig, NonPositiveMean

EXIT_OK, EXIT_PARTIAL, EXIT_INVALID = 0, 1, 2

log = logging.getLogger("ddopt")


def _seeds(text: str) -> list[int]:
    """``0-9`` or ``1,4,7`` or a mix."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def _paradigms(args) -> list[ParadigmConfig]:
    texts = args.paradigm or list(DEFAULT_PARADIGMS)
    return [ParadigmConfig.parse(t, norm=args.norm) for t in texts]


def cmd_validate(args) -> int:
    try:
        bnd = B.read_bundle(args.dataset, require_training=False)
    except B.BundleError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    rep = B.validate_bundle(bnd)
    for issue in rep.errors:
        print(f"error: {issue}")
    for issue in rep.warnings:
        print(f"warning: {issue}")
    print("ok" if rep.ok else f"{len(rep.errors)} error(s)")
    return EXIT_OK if rep.ok else EXIT_INVALID


def cmd_gen(args) -> int:
    gen = GeneratorConfig(family=args.family, cv=args.cv, seed=_seeds(args.seeds)[0], n=args.n_in)
    try:
        out = generate_problem(args.dataset, args.out, gen, args.n_out)
    except (B.BundleError, NonPositiveMean) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    print(out)
    return EXIT_OK


def cmd_solve(args) -> int:
    try:
        bnd = B.load_bundle(args.dataset)
    except B.BundleError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    code = EXIT_OK
    for cfg in _paradigms(args):
        mps = out / f"{cfg.label}.mps" if args.mps_export else None
        rec = solve_problem(bnd, cfg, args.author, mps)
        write_record(rec, out / f"{cfg.label}.record.json")
        print(f"{cfg.label}: {rec.status}" + ("" if rec.v_in is None else f" v_in={rec.v_in:.6g}"))
        if not rec.ok:
            code = EXIT_PARTIAL
    return code


def cmd_eval(args) -> int:
    try:
        bnd = B.load_bundle(args.dataset)
        rec = read_record(args.record)
    except (B.BundleError, OSError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    if not rec.ok:
        print(f"error: record status is {rec.status}", file=sys.stderr)
        return EXIT_PARTIAL
    try:
        rep = evaluate_decision(rec, bnd, args.tol)
    except (B.ShapeMismatch, MissingTestingSamples) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out) if args.out else Path(args.record).with_suffix(".report.json")
    write_report(rep, rec, out)
    print(f"FR={rep.FR:.4f} Obj={rep.Obj} OpR={rep.OpR} N_feas={rep.N_feas}/{rep.N_out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        cfg = RunConfig(dataset=Path(args.dataset), out=Path(args.out), paradigms=_paradigms(args),
                        seeds=_seeds(args.seeds), n_in=args.n_in, n_out=args.n_out,
                        family=args.family, cv=args.cv, tol=args.tol, author=args.author,
                        workers=args.workers, mps_export=args.mps_export)
        res = run_bench(cfg)
    except (ValueError, B.BundleError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    print(summary_table(res["summary"]), end="")
    return EXIT_PARTIAL if res["failed"] else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ddopt", description="Data-driven optimization benchmark tool")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--dataset", required=True, help="problem bundle (or directory of bundles)")
        p.add_argument("--out", required=out_required)

    def gen_flags(p):
        p.add_argument("--seeds", default="0-9", help="e.g. 0-9 or 1,3,5")
        p.add_argument("--n-in", type=int, default=50)
        p.add_argument("--n-out", type=int, default=1000)
        p.add_argument("--cv", type=float, default=0.3)
        p.add_argument("--family", choices=FAMILIES, default="Lognormal")

    def solve_flags(p):
        p.add_argument("--paradigm", action="append", help="dm|saa|ro|dro:<base>; repeatable")
        p.add_argument("--norm", choices=("L1", "L2", "Linf"), default="L1")
        p.add_argument("--author", choices=("truth", "llm"), default="truth")
        p.add_argument("--mps-export", action="store_true")

    p = sub.add_parser("validate", help="check a bundle")
    p.add_argument("--dataset", required=True)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("gen", help="draw training/testing samples for a seed problem")
    common(p, True)
    gen_flags(p)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("solve", help="solve a bundle under one or more paradigms")
    common(p, True)
    solve_flags(p)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("eval", help="evaluate a decision record out of sample")
    common(p)
    p.add_argument("--record", required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="full sweep over problems, paradigms and seeds")
    common(p, True)
    gen_flags(p)
    solve_flags(p)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_INVALID if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.fn(args)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
