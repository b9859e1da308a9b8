"""Out-of-sample evaluation of decisions against the truth expressions.

Only the testing sample set is read here. Feasibility and objective values
come straight from the truth expressions, not from any lowered model, so
errors in lowering or reformulation show up as evaluation failures.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import expr
from .bundle import BundleError, ProblemBundle, ShapeMismatch
from .sampler import perturb_relative

TIE_TOL = 1e-9


class MissingTestingSamples(BundleError):
    pass


@dataclass
class DecisionRecord:
    problem: str
    paradigm: str
    decisions: dict[str, np.ndarray] | None
    v_in: float | None
    status: str = "Optimal"
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "Optimal" and self.decisions is not None

    def to_dict(self) -> dict:
        return {
            "problem": self.problem, "paradigm": self.paradigm, "seed": self.seed,
            "status": self.status, "v_in": self.v_in,
            "decisions": None if self.decisions is None else
            {k: np.asarray(v, dtype=float).tolist() for k, v in self.decisions.items()},
            **self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionRecord":
        d = dict(d)
        dec = d.pop("decisions", None)
        rec = cls(problem=d.pop("problem"), paradigm=d.pop("paradigm"),
                  decisions=None if dec is None else {k: np.asarray(v, dtype=float) for k, v in dec.items()},
                  v_in=d.pop("v_in", None), status=d.pop("status", "Optimal"), seed=d.pop("seed", None))
        rec.extra = d
        return rec


@dataclass
class EvalReport:
    feasible: np.ndarray        # bool per testing scenario
    v_out: np.ndarray           # objective per testing scenario
    v_in: float
    sense: str
    worse: np.ndarray = None    # bool per scenario, meaningful where feasible

    @property
    def N_out(self) -> int:
        return int(self.feasible.size)

    @property
    def N_feas(self) -> int:
        return int(self.feasible.sum())

    @property
    def FR(self) -> float:
        return self.N_feas / self.N_out

    @property
    def Obj(self) -> float | None:
        if self.N_feas == 0:
            return None
        return float(np.mean(self.v_out[self.feasible]))

    @property
    def OpR(self) -> float | None:
        if self.N_feas == 0:
            return None
        return float(np.mean(self.worse[self.feasible]))

    def to_dict(self, per_sample: bool = True) -> dict:
        out = {"N_out": self.N_out, "N_feas": self.N_feas, "FR": self.FR, "Obj": self.Obj,
               "OpR": self.OpR, "v_in": self.v_in, "sense": self.sense}
        if per_sample:
            out["feasible"] = self.feasible.astype(int).tolist()
            out["v_out"] = self.v_out.tolist()
        return out


def is_worse(v_out, v_in: float, sense: str) -> np.ndarray:
    """Strictly worse than the in-sample value, beyond a relative tie tolerance."""
    v_out = np.asarray(v_out, dtype=float)
    tol = TIE_TOL * max(1.0, abs(v_in))
    if sense == "min":
        return v_out > v_in + tol
    return v_out < v_in - tol


def check_shapes(record: DecisionRecord, bundle: ProblemBundle) -> dict[str, np.ndarray]:
    if record.decisions is None:
        raise ShapeMismatch("record carries no decision")
    out = {}
    for d in bundle.decisions:
        if d.symbol not in record.decisions:
            raise ShapeMismatch(d.symbol)
        v = np.asarray(record.decisions[d.symbol], dtype=float)
        if v.shape != tuple(d.shape):
            raise ShapeMismatch(d.symbol)
        out[d.symbol] = v
    extra = set(record.decisions) - set(out)
    if extra:
        raise ShapeMismatch(sorted(extra)[0])
    return out


def _parsed(bundle: ProblemBundle):
    cons = [expr.parse_expr(t) for t in bundle.truth.constraints]
    return cons, expr.parse_objective(bundle.truth.objective)


def evaluate_decision(record: DecisionRecord, bundle: ProblemBundle,
                      tol_abs: float = expr.DEFAULT_TOL) -> EvalReport:
    """Feasibility and objective of ``record`` on every testing scenario."""
    test = bundle.testing
    if test is None or test.sample_size < 1:
        raise MissingTestingSamples(f"{bundle.name}: no testing samples")
    x = check_shapes(record, bundle)
    cons, obj = _parsed(bundle)
    n = test.sample_size
    feas = np.zeros(n, dtype=bool)
    v_out = np.zeros(n)
    for i in range(n):
        env = {**test.scenario(i), **x}
        feas[i] = all(expr.check_constraint(c, env, tol_abs).satisfied for c in cons)
        v_out[i] = float(expr.eval_expr(obj, env))
    sense = bundle.truth.problem_type
    v_in = float(record.v_in)
    return EvalReport(feas, v_out, v_in, sense, is_worse(v_out, v_in, sense))


# --- dataset level -------------------------------------------------------------------

@dataclass
class DatasetSummary:
    n_total: int
    n_success: int
    SR: float
    FR: float | None
    Obj: float | None
    OpR: float | None
    n_opr_excluded: int = 0

    def to_dict(self) -> dict:
        return {"n_total": self.n_total, "n_success": self.n_success, "SR": self.SR,
                "FR": self.FR, "Obj": self.Obj, "OpR": self.OpR,
                "n_opr_excluded": self.n_opr_excluded}


def aggregate_dataset(entries) -> DatasetSummary:
    """Fold ``(ok, report)`` pairs; failed entries count only toward SR."""
    entries = list(entries)
    if not entries:
        raise ValueError("need at least one entry")
    reports = [r for ok, r in entries if ok and r is not None]
    with_feas = [r for r in reports if r.N_feas > 0]
    mean = (lambda v: float(np.mean(v)) if v else None)
    return DatasetSummary(
        n_total=len(entries), n_success=len(reports), SR=len(reports) / len(entries),
        FR=mean([r.FR for r in reports]),
        Obj=mean([r.Obj for r in with_feas]),
        OpR=mean([r.OpR for r in with_feas]),
        n_opr_excluded=len(reports) - len(with_feas))


TABLE_COLUMNS = ("model", "SR", "FR", "Obj", "OpR")


def _fmt(v, digits=2):
    return "-" if v is None else f"{v:.{digits}f}"


def summary_rows(rows: list[tuple[str, DatasetSummary]]) -> list[dict]:
    return [{"model": name, "SR": s.SR, "FR": s.FR, "Obj": s.Obj, "OpR": s.OpR} for name, s in rows]


def summary_csv(rows: list[tuple[str, DatasetSummary]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in summary_rows(rows):
        w.writerow([r["model"]] + ["" if r[k] is None else repr(float(r[k])) for k in TABLE_COLUMNS[1:]])
    return buf.getvalue()


def summary_table(rows: list[tuple[str, DatasetSummary]]) -> str:
    cells = [list(TABLE_COLUMNS)]
    for r in summary_rows(rows):
        cells.append([r["model"], _fmt(r["SR"]), _fmt(r["FR"]), _fmt(r["Obj"], 1), _fmt(r["OpR"])])
    widths = [max(len(c[i]) for c in cells) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(c[0].ljust(widths[0]) if j == 0 else c[j].rjust(widths[j])
                       for j in range(len(c))) for c in cells]
    return "\n".join(lines) + "\n"


def report_json(report: EvalReport, record: DecisionRecord) -> str:
    return json.dumps({"problem": record.problem, "paradigm": record.paradigm,
                       "seed": record.seed, **report.to_dict()}, indent=2)


# --- stress test ---------------------------------------------------------------------

def _signed_body(node, env) -> np.ndarray:
    lhs = expr.eval_expr(node.lhs, env)
    rhs = expr.eval_expr(node.rhs, env)
    shape = expr.broadcast_shape(lhs.shape, rhs.shape)
    if node.op == "<=":
        d = lhs - rhs
    elif node.op == ">=":
        d = rhs - lhs
    else:
        d = np.abs(lhs - rhs)
    return np.broadcast_to(d, shape)


def stress_violation(record: DecisionRecord, bundle: ProblemBundle, rho: float, n: int,
                     seed: int = 0) -> dict:
    """Relative constraint violation under uniform relative parameter noise.

    All parameter entries are perturbed jointly around the nominal values of
    the testing set (the training set if no testing set is present). Each
    elementwise row is scaled by ``max(1, |constant term at nominal|)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    src = bundle.testing if bundle.testing is not None else bundle.training
    x = check_shapes(record, bundle)
    nominal = src.nominal_env()
    syms = list(nominal)
    flat = np.concatenate([np.ravel(nominal[s]) for s in syms]) if syms else np.zeros(0)
    cuts = np.cumsum([np.size(nominal[s]) for s in syms])[:-1]
    cons = [(i, c) for i, c in enumerate(_parsed(bundle)[0]) if isinstance(c, expr.Compare)]

    zero = {k: np.zeros_like(v) for k, v in x.items()}
    scales = {i: np.maximum(1.0, np.abs(_signed_body(c, {**nominal, **zero}))) for i, c in cons}

    per_scn = np.zeros(n)
    per_con = {f"constraints[{i}]": np.zeros(n) for i, _ in cons}
    for k, vec in enumerate(perturb_relative(flat, rho, seed, n)):
        env = {s: part.reshape(np.shape(nominal[s])) for s, part in zip(syms, np.split(vec, cuts))}
        env.update(x)
        for i, c in cons:
            rel = np.maximum(_signed_body(c, env), 0.0) / scales[i]
            per_con[f"constraints[{i}]"][k] = float(rel.max()) if rel.size else 0.0
        per_scn[k] = max((v[k] for v in per_con.values()), default=0.0)
    return {
        "rho": rho, "n": n,
        "max_rel_violation": float(per_scn.max()),
        "mean_rel_violation": float(per_scn.mean()),
        "per_constraint": {key: {"max": float(v.max()), "mean": float(v.mean())}
                           for key, v in per_con.items()},
    }
