"""Problem bundles: loading, validation and serialization.

A bundle is a directory holding::

    description.txt        natural-language problem statement (no data)
    decision_symbol.txt    JSON object with a "decision_variables" array
    truth.json             constraint/objective expressions + problem_type
    training_sample.json   in-sample data (required for model building)
    testing_sample.json    out-of-sample data (required for evaluation)

Sample files share one layout: ``{"sample_size": N, "parameters": [...]}``
where each parameter carries ``symbol, meaning, is_random, value, sample,
type, shape, is_non_negative``. Unknown keys are kept on round trip.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import expr

log = logging.getLogger(__name__)

DESCRIPTION = "description.txt"
DECISIONS = "decision_symbol.txt"
TRUTH = "truth.json"
TRAINING = "training_sample.json"
TESTING = "testing_sample.json"

MEAN_TOL = 1e-9
INT_TOL = 1e-9

PARAM_TYPES = ("Continuous", "Integer")
DECISION_TYPES = ("Continuous", "Integer", "Binary")
ROLES = ("training", "testing")

_PARAM_KEYS = ("symbol", "meaning", "is_random", "value", "sample", "type",
               "shape", "is_non_negative")
_DECISION_KEYS = ("symbol", "meaning", "type", "shape", "is_non_negative")


class BundleError(Exception):
    """Base class for bundle loading failures."""


class MissingFile(BundleError):
    def __init__(self, path):
        self.path = Path(path)
        super().__init__(f"missing file: {self.path}")


class MalformedDocument(BundleError):
    def __init__(self, file, location, detail=""):
        self.file = str(file)
        self.location = location
        super().__init__(f"{self.file}: malformed at {location}"
                         + (f": {detail}" if detail else ""))


class UnknownSymbol(BundleError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unknown symbol {name!r}")


class ShapeMismatch(BundleError):
    def __init__(self, symbol, detail=""):
        self.symbol = symbol
        super().__init__(f"shape mismatch for {symbol!r}" + (f": {detail}" if detail else ""))


class InvalidBundle(BundleError):
    def __init__(self, report):
        self.report = report
        super().__init__("; ".join(str(e) for e in report.errors))


class RoleError(BundleError):
    """A sample set was used in a role it does not have."""


# --- data model ---------------------------------------------------------------

@dataclass
class ParameterSpec:
    symbol: str
    meaning: str
    is_random: bool
    value: np.ndarray
    shape: tuple[int, ...]
    type: str = "Continuous"
    is_non_negative: bool = False
    sample: np.ndarray | None = None  # (n, *shape) stacked realizations
    extra: dict = field(default_factory=dict)

    def copy(self) -> "ParameterSpec":
        return ParameterSpec(
            self.symbol, self.meaning, self.is_random, self.value.copy(),
            tuple(self.shape), self.type, self.is_non_negative,
            None if self.sample is None else self.sample.copy(), dict(self.extra))


@dataclass
class DecisionSpec:
    symbol: str
    meaning: str
    shape: tuple[int, ...]
    type: str = "Continuous"
    is_non_negative: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=int))


@dataclass
class TruthSpec:
    constraints: list[str]
    objective: str
    problem_type: str
    extra: dict = field(default_factory=dict)


@dataclass
class SampleSet:
    """One sample file: parameter metadata plus joint realizations.

    Realization ``i`` of every random parameter together forms scenario ``i``.
    """
    role: str
    sample_size: int
    parameters: list[ParameterSpec]
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")

    def param(self, symbol: str) -> ParameterSpec:
        for p in self.parameters:
            if p.symbol == symbol:
                return p
        raise UnknownSymbol(symbol)

    @property
    def random_parameters(self) -> list[ParameterSpec]:
        return [p for p in self.parameters if p.is_random]

    def nominal_env(self) -> dict[str, np.ndarray]:
        return {p.symbol: p.value for p in self.parameters}

    def scenario(self, i: int) -> dict[str, np.ndarray]:
        """Parameter bindings for joint scenario ``i``."""
        env = {}
        for p in self.parameters:
            env[p.symbol] = p.sample[i] if p.is_random and p.sample is not None else p.value
        return env

    def with_role(self, role: str) -> "SampleSet":
        return SampleSet(role, self.sample_size, [p.copy() for p in self.parameters],
                         dict(self.extra))


@dataclass
class ProblemBundle:
    name: str
    description: str
    decisions: list[DecisionSpec]
    truth: TruthSpec | None
    training: SampleSet | None
    testing: SampleSet | None = None
    root: Path | None = None

    @property
    def parameters(self) -> list[ParameterSpec]:
        src = self.training if self.training is not None else self.testing
        return [] if src is None else src.parameters

    def decision(self, symbol: str) -> DecisionSpec:
        for d in self.decisions:
            if d.symbol == symbol:
                return d
        raise UnknownSymbol(symbol)


@dataclass
class Issue:
    code: str
    message: str
    symbol: str | None = None
    file: str | None = None

    def __str__(self):
        where = f" [{self.file}]" if self.file else ""
        return f"{self.code}: {self.message}{where}"


@dataclass
class ValidationReport:
    errors: list[Issue] = field(default_factory=list)
    warnings: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def codes(self) -> list[str]:
        return [i.code for i in self.errors + self.warnings]

    def to_dict(self) -> dict:
        conv = lambda items: [{"code": i.code, "message": i.message,
                               "symbol": i.symbol, "file": i.file} for i in items]
        return {"errors": conv(self.errors), "warnings": conv(self.warnings)}


# --- parsing ------------------------------------------------------------------

def _read_json(path: Path) -> Any:
    if not path.is_file():
        raise MissingFile(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise MalformedDocument(path.name, f"line {e.lineno} col {e.colno}", e.msg) from None


def _require(obj, key, file, where):
    if not isinstance(obj, dict) or key not in obj:
        raise MalformedDocument(file, f"{where}.{key}", "required field missing")
    return obj[key]


def _shape(raw, file, where) -> tuple[int, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list) or not all(isinstance(d, int) and not isinstance(d, bool)
                                            and d >= 0 for d in raw):
        raise MalformedDocument(file, where, f"shape must be a list of non-negative ints, got {raw!r}")
    return tuple(raw)


def _array(raw, file, where) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise MalformedDocument(file, where, "not a numeric array") from None
    return arr


def _flag(raw, file, where) -> bool:
    if raw in (0, 1, True, False):
        return bool(raw)
    raise MalformedDocument(file, where, f"expected 0 or 1, got {raw!r}")


def parse_parameter(raw: dict, file: str, where: str) -> ParameterSpec:
    symbol = _require(raw, "symbol", file, where)
    is_random = _flag(raw.get("is_random", 0), file, f"{where}.is_random")
    shape = _shape(raw.get("shape", []), file, f"{where}.shape")
    value = _array(_require(raw, "value", file, where), file, f"{where}.value")
    sample_raw = raw.get("sample")
    sample = None
    if sample_raw is not None:
        sample = _array(sample_raw, file, f"{where}.sample")
    extra = {k: v for k, v in raw.items() if k not in _PARAM_KEYS}
    return ParameterSpec(
        symbol=symbol, meaning=raw.get("meaning", ""), is_random=is_random,
        value=value, shape=shape, type=raw.get("type", "Continuous"),
        is_non_negative=_flag(raw.get("is_non_negative", 0), file, f"{where}.is_non_negative"),
        sample=sample, extra=extra)


def parse_sample_set(raw: Any, role: str, file: str = "<sample set>") -> SampleSet:
    if not isinstance(raw, dict):
        raise MalformedDocument(file, "$", "top level must be an object")
    size = _require(raw, "sample_size", file, "$")
    if not isinstance(size, int) or isinstance(size, bool):
        raise MalformedDocument(file, "$.sample_size", "must be an integer")
    params = _require(raw, "parameters", file, "$")
    if not isinstance(params, list):
        raise MalformedDocument(file, "$.parameters", "must be a list")
    parsed = [parse_parameter(p, file, f"$.parameters[{i}]") for i, p in enumerate(params)]
    extra = {k: v for k, v in raw.items() if k not in ("sample_size", "parameters")}
    return SampleSet(role, size, parsed, extra)


def parse_decisions(raw: Any, file: str = DECISIONS) -> list[DecisionSpec]:
    items = _require(raw, "decision_variables", file, "$")
    if not isinstance(items, list):
        raise MalformedDocument(file, "$.decision_variables", "must be a list")
    out = []
    for i, d in enumerate(items):
        where = f"$.decision_variables[{i}]"
        out.append(DecisionSpec(
            symbol=_require(d, "symbol", file, where),
            meaning=d.get("meaning", d.get("description", "")),
            shape=_shape(d.get("shape", []), file, f"{where}.shape"),
            type=d.get("type", "Continuous"),
            is_non_negative=_flag(d.get("is_non_negative", 0), file, f"{where}.is_non_negative"),
            extra={k: v for k, v in d.items() if k not in _DECISION_KEYS}))
    return out


def parse_truth(raw: Any, file: str = TRUTH) -> TruthSpec:
    cons = _require(raw, "constraints", file, "$")
    if not isinstance(cons, list) or not all(isinstance(c, str) for c in cons):
        raise MalformedDocument(file, "$.constraints", "must be a list of strings")
    obj = _require(raw, "objective", file, "$")
    if not isinstance(obj, str):
        raise MalformedDocument(file, "$.objective", "must be a string")
    sense = _require(raw, "problem_type", file, "$")
    if sense not in ("min", "max"):
        raise MalformedDocument(file, "$.problem_type", f"must be 'min' or 'max', got {sense!r}")
    extra = {k: v for k, v in raw.items() if k not in ("constraints", "objective", "problem_type")}
    return TruthSpec(list(cons), obj, sense, extra)


def read_bundle(root, *, require_training: bool = True) -> ProblemBundle:
    """Parse a bundle directory without semantic validation."""
    root = Path(root)
    if not root.is_dir():
        raise MissingFile(root)
    desc_path = root / DESCRIPTION
    if not desc_path.is_file():
        raise MissingFile(desc_path)
    description = desc_path.read_text(encoding="utf-8")
    decisions = parse_decisions(_read_json(root / DECISIONS))
    truth = parse_truth(_read_json(root / TRUTH))
    training = testing = None
    if (root / TRAINING).is_file() or require_training:
        training = parse_sample_set(_read_json(root / TRAINING), "training", TRAINING)
    if (root / TESTING).is_file():
        testing = parse_sample_set(_read_json(root / TESTING), "testing", TESTING)
    if training is None and testing is None:
        raise MissingFile(root / TESTING)
    return ProblemBundle(root.name, description, decisions, truth, training, testing, root)


def load_bundle(root, *, require_training: bool = True) -> ProblemBundle:
    """Read and validate a bundle; raise on the first validation error.

    Warnings (e.g. a ``value`` that is not the sample mean) are logged.
    """
    bundle = read_bundle(root, require_training=require_training)
    report = validate_bundle(bundle)
    for w in report.warnings:
        log.warning("%s: %s", bundle.name, w)
    if report.errors:
        first = report.errors[0]
        if first.code == "UnknownSymbol":
            raise UnknownSymbol(first.symbol)
        if first.code == "ShapeMismatch":
            raise ShapeMismatch(first.symbol, first.message)
        raise InvalidBundle(report)
    return bundle


# --- validation ---------------------------------------------------------------

def _check_sample_set(ss: SampleSet, file: str, rep: ValidationReport):
    err = lambda code, msg, sym=None: rep.errors.append(Issue(code, msg, sym, file))
    if ss.sample_size < 1:
        err("BadSampleSize", f"sample_size must be >= 1, got {ss.sample_size}")
    seen = set()
    for p in ss.parameters:
        if p.symbol in seen:
            err("DuplicateSymbol", f"parameter {p.symbol!r} declared twice", p.symbol)
        seen.add(p.symbol)
        if p.type == "Binary":
            err("BinaryParameter", f"{p.symbol}: Binary parameters are not supported", p.symbol)
            continue
        if p.type not in PARAM_TYPES:
            err("BadType", f"{p.symbol}: unknown type {p.type!r}", p.symbol)
        if any(d < 1 for d in p.shape):
            err("ShapeMismatch", f"{p.symbol}: parameter dimensions must be positive", p.symbol)
        if p.value.shape != p.shape:
            err("ShapeMismatch", f"{p.symbol}: value has shape {list(p.value.shape)}, "
                f"declared {list(p.shape)}", p.symbol)
        if not np.all(np.isfinite(p.value)):
            err("NonFinite", f"{p.symbol}: non-finite value", p.symbol)
        if not p.is_random:
            if p.sample is not None:
                err("UnexpectedSample", f"{p.symbol}: deterministic parameter has samples", p.symbol)
        elif p.sample is not None:
            if p.sample.ndim == 0 or p.sample.shape[1:] != p.shape:
                got = list(p.sample.shape[1:]) if p.sample.ndim else []
                err("ShapeMismatch", f"{p.symbol}: sample shape {got}, declared {list(p.shape)}",
                    p.symbol)
                continue
            if p.sample.shape[0] != ss.sample_size:
                err("SampleSizeMismatch", f"{p.symbol}: {p.sample.shape[0]} samples, "
                    f"sample_size is {ss.sample_size}", p.symbol)
            if p.value.shape == p.shape and p.sample.shape[0] > 0:
                gap = np.max(np.abs(p.sample.mean(axis=0) - p.value), initial=0.0)
                if gap > MEAN_TOL:
                    rep.warnings.append(Issue("MeanMismatch", f"{p.symbol}: value differs from "
                                              f"sample mean by {gap:.3g}", p.symbol, file))
        else:
            rep.warnings.append(Issue("NoSamples", f"{p.symbol}: random parameter without samples",
                                      p.symbol, file))
        if p.type == "Integer" and np.all(np.isfinite(p.value)):
            vals = [p.value] if p.sample is None else [p.value, p.sample]
            if not p.is_random and any(np.any(np.abs(v - np.rint(v)) > INT_TOL) for v in vals):
                err("NonIntegerValue", f"{p.symbol}: Integer parameter has fractional values",
                    p.symbol)
            elif p.sample is not None and np.any(np.abs(p.sample - np.rint(p.sample)) > INT_TOL):
                err("NonIntegerValue", f"{p.symbol}: Integer parameter has fractional samples",
                    p.symbol)
        if p.is_non_negative:
            vals = p.value if p.sample is None else np.concatenate(
                [p.value.ravel(), p.sample.ravel()])
            if np.any(vals < 0):
                err("NegativeValue", f"{p.symbol}: non-negative parameter has negative entries",
                    p.symbol)


def validate_bundle(bundle: ProblemBundle) -> ValidationReport:
    """Check every cross-reference and invariant; never raises."""
    rep = ValidationReport()
    err = lambda code, msg, sym=None, f=None: rep.errors.append(Issue(code, msg, sym, f))

    dsyms = set()
    for d in bundle.decisions:
        if d.symbol in dsyms:
            err("DuplicateSymbol", f"decision {d.symbol!r} declared twice", d.symbol, DECISIONS)
        dsyms.add(d.symbol)
        if d.type not in DECISION_TYPES:
            err("BadType", f"{d.symbol}: unknown decision type {d.type!r}", d.symbol, DECISIONS)
        if len(d.shape) > 2:
            err("ShapeMismatch", f"{d.symbol}: decisions have at most 2 dimensions",
                d.symbol, DECISIONS)

    sets = [(s, f) for s, f in ((bundle.training, TRAINING), (bundle.testing, TESTING))
            if s is not None]
    for ss, f in sets:
        _check_sample_set(ss, f, rep)
    psyms = {p.symbol for p in bundle.parameters}
    for sym in sorted(psyms & dsyms):
        err("DuplicateSymbol", f"{sym!r} is both a decision and a parameter", sym)
    if len(sets) == 2:
        tr = {p.symbol: p for p in bundle.training.parameters}
        te = {p.symbol: p for p in bundle.testing.parameters}
        for sym in sorted(set(tr) ^ set(te)):
            err("ParameterSetMismatch", f"{sym!r} is declared in only one sample file", sym)
        for sym in sorted(set(tr) & set(te)):
            if tr[sym].shape != te[sym].shape:
                err("ShapeMismatch", f"{sym}: training and testing shapes differ", sym)
            if tr[sym].is_random != te[sym].is_random:
                err("RandomnessMismatch", f"{sym}: is_random differs between sample files", sym)

    if bundle.truth is not None:
        known = psyms | dsyms
        texts = [(t, f"constraints[{i}]") for i, t in enumerate(bundle.truth.constraints)]
        texts.append((bundle.truth.objective, "objective"))
        for text, where in texts:
            try:
                node = (expr.parse_objective(text) if where == "objective"
                        else expr.parse_expr(text))
            except expr.ExprError as e:
                err("ExpressionError", f"{where}: {e}", None, TRUTH)
                continue
            if where != "objective" and not (
                    isinstance(node, expr.Compare)
                    or (isinstance(node, expr.Call) and node.fn in expr.PREDICATES)):
                err("ExpressionError", f"{where}: not a comparison or type predicate", None, TRUTH)
            for sym in sorted(expr.free_symbols(node) - known):
                err("UnknownSymbol", f"{where} references undeclared symbol {sym!r}", sym, TRUTH)
    return rep


# --- writing ------------------------------------------------------------------

def _jsonable(arr: np.ndarray, integral: bool):
    if integral and np.all(arr == np.rint(arr)):
        return np.asarray(arr, dtype=np.int64).tolist()
    return np.asarray(arr, dtype=float).tolist()


def parameter_to_dict(p: ParameterSpec) -> dict:
    integral = p.type == "Integer"
    out = {
        "symbol": p.symbol,
        "meaning": p.meaning,
        "is_random": int(p.is_random),
        "value": _jsonable(p.value, integral),
        "sample": None if p.sample is None else _jsonable(p.sample, integral),
        "type": p.type,
        "shape": list(p.shape),
        "is_non_negative": int(p.is_non_negative),
    }
    out.update(p.extra)
    return out


def sample_set_to_dict(ss: SampleSet) -> dict:
    out = {"sample_size": ss.sample_size,
           "parameters": [parameter_to_dict(p) for p in ss.parameters]}
    out.update(ss.extra)
    return out


def write_sample_set(ss: SampleSet, path) -> None:
    """Write a sample file; floats are emitted with round-trip precision."""
    if ss.sample_size < 1:
        raise ValueError("sample_size must be >= 1")
    for p in ss.random_parameters:
        if p.sample is not None and p.sample.shape[0] != ss.sample_size:
            raise ValueError(f"{p.symbol}: {p.sample.shape[0]} samples, sample_size {ss.sample_size}")
    text = json.dumps(sample_set_to_dict(ss), indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_sample_set(path, role: str) -> SampleSet:
    path = Path(path)
    return parse_sample_set(_read_json(path), role, path.name)


def decisions_to_dict(decisions: list[DecisionSpec]) -> dict:
    items = []
    for d in decisions:
        item = {"symbol": d.symbol, "meaning": d.meaning, "shape": list(d.shape),
                "type": d.type, "is_non_negative": int(d.is_non_negative)}
        item.update(d.extra)
        items.append(item)
    return {"decision_variables": items}


def truth_to_dict(t: TruthSpec) -> dict:
    out = {"constraints": list(t.constraints), "objective": t.objective,
           "problem_type": t.problem_type}
    out.update(t.extra)
    return out


def write_bundle(bundle: ProblemBundle, root) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / DESCRIPTION).write_text(bundle.description, encoding="utf-8")
    (root / DECISIONS).write_text(json.dumps(decisions_to_dict(bundle.decisions), indent=2) + "\n",
                                  encoding="utf-8")
    if bundle.truth is not None:
        (root / TRUTH).write_text(json.dumps(truth_to_dict(bundle.truth), indent=2) + "\n",
                                  encoding="utf-8")
    if bundle.training is not None:
        write_sample_set(bundle.training, root / TRAINING)
    if bundle.testing is not None:
        write_sample_set(bundle.testing, root / TESTING)
    return root


def sample_sets_equal(a: SampleSet, b: SampleSet) -> bool:
    if (a.role, a.sample_size, a.extra) != (b.role, b.sample_size, b.extra):
        return False
    if len(a.parameters) != len(b.parameters):
        return False
    for p, q in zip(a.parameters, b.parameters):
        if (p.symbol, p.meaning, p.is_random, p.shape, p.type, p.is_non_negative, p.extra) != \
                (q.symbol, q.meaning, q.is_random, q.shape, q.type, q.is_non_negative, q.extra):
            return False
        if not np.array_equal(p.value, q.value):
            return False
        if (p.sample is None) != (q.sample is None):
            return False
        if p.sample is not None and not np.array_equal(p.sample, q.sample):
            return False
    return True


def require_role(ss: SampleSet, role: str) -> SampleSet:
    if ss is None:
        raise RoleError(f"a {role} sample set is required")
    if ss.role != role:
        raise RoleError(f"expected a {role} sample set, got {ss.role}")
    return ss

