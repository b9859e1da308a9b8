"""Generate, solve, evaluate and sweep; the CLI is a thin layer over this."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bundle as B
from .canonical import LinearModel, LoweringError
from .evaluator import (DecisionRecord, EvalReport, aggregate_dataset, evaluate_decision,
                        summary_csv, summary_table)
from .formulator import AttemptsExhausted, MalformedModelDocument, PreconditionFailure, \
    TransportFailure, get_author
from .lp import solve, to_mps
from .paradigms import ParadigmConfig, UnsupportedNorm, EmptySamples, build
from .sampler import GeneratorConfig, generate_samples

log = logging.getLogger(__name__)

DEFAULT_PARADIGMS = ("ro", "dro:0.5", "dro:0.1", "dro:0", "dm")
PROVENANCE = "generator.json"
AUTHOR_ERRORS = (AttemptsExhausted, MalformedModelDocument, PreconditionFailure, TransportFailure,
                 LoweringError)


@dataclass
class RunConfig:
    dataset: Path
    out: Path
    paradigms: list[ParadigmConfig] = field(
        default_factory=lambda: [ParadigmConfig.parse(p) for p in DEFAULT_PARADIGMS])
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    n_in: int = 50
    n_out: int = 1000
    family: str = "Lognormal"
    cv: float = 0.3
    tol: float = 1e-6
    author: str = "truth"
    workers: int = 1
    mps_export: bool = False

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise ValueError("n_in and n_out must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.paradigms:
            raise ValueError("at least one paradigm is required")


def list_problems(root) -> list[Path]:
    """A bundle directory, or a directory of bundle directories, sorted by name."""
    root = Path(root)
    if (root / B.DECISIONS).exists():
        return [root]
    found = sorted(p for p in root.iterdir() if p.is_dir() and (p / B.DECISIONS).exists())
    if not found:
        raise B.MissingFile(f"no problem bundles under {root}")
    return found


# --- gen -------------------------------------------------------------------------------

def generate_problem(seed_root, out_root, gen: GeneratorConfig, n_out: int) -> Path:
    """Copy a seed problem and attach freshly drawn training/testing sets."""
    seed_root, out_root = Path(seed_root), Path(out_root)
    src = B.load_bundle(seed_root, require_training=False)
    template = src.training if src.training is not None else src.testing
    if template is None:
        raise B.MissingFile(f"{seed_root}: a sample file is needed for nominal values")
    out_root.mkdir(parents=True, exist_ok=True)
    for name in (B.DESCRIPTION, B.DECISIONS, B.TRUTH):
        if (seed_root / name).exists():
            shutil.copyfile(seed_root / name, out_root / name)
    train = generate_samples(template, gen, "training")
    test = generate_samples(template, dataclasses.replace(gen, n=n_out), "testing")
    B.write_sample_set(train, out_root / B.TRAINING)
    B.write_sample_set(test, out_root / B.TESTING)
    prov = {"seed_problem": seed_root.name, "n_in": gen.n, "n_out": n_out, **gen.to_dict()}
    (out_root / PROVENANCE).write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")
    return out_root


# --- solve -----------------------------------------------------------------------------

def decisions_from_vector(model: LinearModel, x: np.ndarray) -> dict[str, np.ndarray]:
    return {b.symbol: np.asarray(x[b.offset:b.offset + b.size]).reshape(b.shape)
            for b in model.decisions}


def solve_problem(bundle: B.ProblemBundle, paradigm: ParadigmConfig, author="truth",
                  mps_path=None, **author_kw) -> DecisionRecord:
    """Author a model from in-sample information, reformulate and solve."""
    author = get_author(author, **author_kw) if isinstance(author, str) else author
    seen = dataclasses.replace(bundle, testing=None)
    rec = DecisionRecord(bundle.name, paradigm.label, None, None, "Pending")
    try:
        model = author.author(seen)
    except AUTHOR_ERRORS as e:
        rec.status = "AuthorFailed"
        rec.extra["error"] = f"{type(e).__name__}: {e}"
        return rec
    try:
        lp = build(model, paradigm, seen.training)
    except (UnsupportedNorm, EmptySamples, B.RoleError) as e:
        rec.status = "BuildFailed"
        rec.extra["error"] = f"{type(e).__name__}: {e}"
        return rec
    if mps_path is not None:
        Path(mps_path).write_text(to_mps(lp, bundle.name.upper()[:8] or "MODEL"))
    sol = solve(lp)
    rec.status = sol.status.value
    if sol.ok:
        rec.decisions = decisions_from_vector(model, sol.x)
        rec.v_in = float(sol.objective)
    return rec


def write_record(rec: DecisionRecord, path) -> None:
    Path(path).write_text(json.dumps(rec.to_dict(), indent=2) + "\n")


def read_record(path) -> DecisionRecord:
    return DecisionRecord.from_dict(json.loads(Path(path).read_text()))


def write_report(rep: EvalReport, rec: DecisionRecord, path) -> None:
    out = {"problem": rec.problem, "paradigm": rec.paradigm, "seed": rec.seed, **rep.to_dict()}
    Path(path).write_text(json.dumps(out, indent=2) + "\n")


# --- bench -----------------------------------------------------------------------------

@dataclass(frozen=True)
class _Metrics:
    FR: float
    Obj: float | None
    OpR: float | None
    N_feas: int


def _run_cell(job: tuple) -> dict:
    problem_dir, cell_dir, label, spec, seed, tol, author, mps = job
    cfg = ParadigmConfig(**spec)
    cell_dir = Path(cell_dir)
    cell_dir.mkdir(parents=True, exist_ok=True)
    row = {"problem": Path(problem_dir).parent.name, "paradigm": label, "seed": seed}
    try:
        bnd = B.load_bundle(problem_dir)
        bnd.name = row["problem"]
        rec = solve_problem(bnd, cfg, author, cell_dir / "model.mps" if mps else None)
        rec.seed = seed
        write_record(rec, cell_dir / "record.json")
        row.update(status=rec.status, v_in=rec.v_in)
        if rec.ok:
            rep = evaluate_decision(rec, bnd, tol)
            write_report(rep, rec, cell_dir / "report.json")
            row.update(N_out=rep.N_out, N_feas=rep.N_feas, FR=rep.FR, Obj=rep.Obj, OpR=rep.OpR)
    except Exception as e:   # crash isolation: one cell never aborts the sweep
        log.exception("cell %s failed", cell_dir)
        row.update(status="Error", error=f"{type(e).__name__}: {e}")
    return row


RAW_COLUMNS = ("problem", "paradigm", "seed", "status", "v_in", "N_out", "N_feas", "FR", "Obj", "OpR")


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def raw_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RAW_COLUMNS)
    for r in rows:
        w.writerow([_csv_value(r.get(k)) for k in RAW_COLUMNS])
    return buf.getvalue()


def summarize(rows: list[dict], labels: list[str]):
    out = []
    for label in labels:
        entries = []
        for r in rows:
            if r["paradigm"] != label:
                continue
            ok = r.get("status") == "Optimal" and "FR" in r
            entries.append((ok, _Metrics(r["FR"], r["Obj"], r["OpR"], r["N_feas"]) if ok else None))
        if entries:
            out.append((label, aggregate_dataset(entries)))
    return out


def run_bench(cfg: RunConfig) -> dict:
    """Full sweep. Returns the summary dict; all files land under ``cfg.out``."""
    out = Path(cfg.out)
    problems = list_problems(cfg.dataset)
    jobs = []
    for prob in problems:
        for seed in cfg.seeds:
            data_dir = out / "data" / prob.name / f"seed{seed}"
            gen = GeneratorConfig(family=cfg.family, cv=cfg.cv, seed=seed, n=cfg.n_in)
            generate_problem(prob, data_dir, gen, cfg.n_out)
            for p in cfg.paradigms:
                cell = out / "cells" / prob.name / p.label / f"seed{seed}"
                jobs.append((str(data_dir), str(cell), p.label, dataclasses.asdict(p), seed,
                             cfg.tol, cfg.author, cfg.mps_export))
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            rows = list(ex.map(_run_cell, jobs))
    else:
        rows = [_run_cell(j) for j in jobs]
    rows.sort(key=lambda r: (r["problem"], r["paradigm"], r["seed"]))

    labels = [p.label for p in cfg.paradigms]
    summary = summarize(rows, labels)
    (out / "raw.csv").write_text(raw_csv(rows))
    (out / "summary.csv").write_text(summary_csv(summary))
    (out / "summary.txt").write_text(summary_table(summary))
    manifest = {
        "problems": [p.name for p in problems], "paradigms": labels, "seeds": list(cfg.seeds),
        "n_in": cfg.n_in, "n_out": cfg.n_out, "family": cfg.family, "cv": cfg.cv,
        "tol": cfg.tol, "author": cfg.author,
        "cells": [{k: r.get(k) for k in ("problem", "paradigm", "seed", "status")}
                  | {"path": f"cells/{r['problem']}/{r['paradigm']}/seed{r['seed']}"} for r in rows],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    failed = sum(r.get("status") != "Optimal" for r in rows)
    return {"rows": rows, "summary": summary, "failed": failed}
