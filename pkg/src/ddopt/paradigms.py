"""Counterparts of a bi-affine model under different treatments of uncertainty.

Every uncertain row or objective is handled through its split form::

    body(x, p) = d(x) + c(x).p,    d(x) = d0 + dx.x,   c(x) = cp + Cpx x

so that box worst cases and Wasserstein worst-case expectations have
exact linear reformulations (absolute values and max-norms are lifted
with auxiliary columns).
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass

import numpy as np

from .bundle import SampleSet, require_role
from .canonical import LinearModel, substitute_params
from .lp import ConcreteLP

log = logging.getLogger(__name__)

KINDS = ("DM", "SAA", "RO_Box", "DRO_Wasserstein")
NORMS = ("L1", "L2", "Linf")


class EmptySamples(ValueError):
    pass


class UnsupportedNorm(ValueError):
    pass


@dataclass(frozen=True)
class ParadigmConfig:
    kind: str
    base_radius: float = 0.0
    norm: str = "L1"
    # "scenario": every training scenario must satisfy the row, each one
    # shifted adversarially by the radius; "expectation": one row on the
    # worst-case expectation.
    constraint_mode: str = "scenario"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown paradigm {self.kind!r}")
        if self.base_radius < 0:
            raise ValueError("base radius must be >= 0")
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.constraint_mode not in ("scenario", "expectation"):
            raise ValueError(f"unknown constraint mode {self.constraint_mode!r}")

    @property
    def label(self) -> str:
        if self.kind == "DRO_Wasserstein":
            return f"DRO-{self.base_radius:g}"
        return {"DM": "DM", "SAA": "SAA", "RO_Box": "RO"}[self.kind]

    @classmethod
    def parse(cls, text: str, norm: str = "L1") -> "ParadigmConfig":
        """Parse ``dm``, ``saa``, ``ro`` or ``dro:<base radius>``."""
        t = text.strip().lower()
        if t == "dm":
            return cls("DM")
        if t == "saa":
            return cls("SAA")
        if t == "ro":
            return cls("RO_Box")
        m = re.fullmatch(r"dro[:\-]([0-9.eE+\-]+)", t)
        if m:
            return cls("DRO_Wasserstein", float(m.group(1)), norm)
        raise ValueError(f"cannot parse paradigm {text!r} (expected dm|saa|ro|dro:<base>)")


@dataclass
class BoxSet:
    lower: dict[str, np.ndarray]
    upper: dict[str, np.ndarray]

    @property
    def center(self) -> dict[str, np.ndarray]:
        return {k: (self.lower[k] + self.upper[k]) / 2 for k in self.lower}

    @property
    def halfwidth(self) -> dict[str, np.ndarray]:
        return {k: (self.upper[k] - self.lower[k]) / 2 for k in self.lower}


@dataclass
class WassersteinBall:
    samples: np.ndarray       # (N, np_) reference scenarios
    radius: float
    norm: str = "L1"

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.shape[0] < 1:
            raise EmptySamples("a Wasserstein ball needs at least one reference sample")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.norm not in NORMS:
            raise UnsupportedNorm(self.norm)


# --- sample access -----------------------------------------------------------------

def _training(samples: SampleSet) -> SampleSet:
    return require_role(samples, "training")


def scenario_matrix(model: LinearModel, samples: SampleSet) -> np.ndarray:
    """Stack training scenarios as rows over the model's uncertain entries."""
    _training(samples)
    if model.np_ == 0:
        n = samples.sample_size
        if n < 1:
            raise EmptySamples("no training samples")
        return np.zeros((n, 0))
    cols = []
    n = None
    for b in model.params:
        p = samples.param(b.symbol)
        if p.sample is None or p.sample.shape[0] == 0:
            raise EmptySamples(f"no training samples for {b.symbol!r}")
        if n is None:
            n = p.sample.shape[0]
        elif p.sample.shape[0] != n:
            raise ValueError("uncertain parameters have different sample counts")
        cols.append(p.sample.reshape(n, -1))
    return np.hstack(cols)


def calibrate_box(samples: SampleSet) -> BoxSet:
    """Elementwise min/max of the training samples."""
    _training(samples)
    lo, hi = {}, {}
    for p in samples.random_parameters:
        if p.sample is None or p.sample.shape[0] == 0:
            raise EmptySamples(f"no training samples for {p.symbol!r}")
        lo[p.symbol] = p.sample.min(axis=0)
        hi[p.symbol] = p.sample.max(axis=0)
    if not lo and samples.sample_size < 1:
        raise EmptySamples("no training samples")
    return BoxSet(lo, hi)


def scale_radius(config: ParadigmConfig, samples: SampleSet) -> float:
    """Base radius times the mean absolute empirical mean of all uncertain entries."""
    if config.kind != "DRO_Wasserstein":
        raise ValueError("radius scaling applies to DRO configurations only")
    _training(samples)
    means = []
    for p in samples.random_parameters:
        if p.sample is None or p.sample.shape[0] == 0:
            raise EmptySamples(f"no training samples for {p.symbol!r}")
        means.append(np.abs(p.sample.mean(axis=0)).ravel())
    scale = float(np.concatenate(means).mean()) if means else 0.0
    if scale == 0.0 and config.base_radius > 0:
        log.warning("all uncertain means are zero; radius collapses to 0")
    return config.base_radius * scale


# --- LP assembly -------------------------------------------------------------------

class _Builder:
    """Collects rows over decisions plus auxiliary columns."""

    def __init__(self, model: LinearModel):
        self.model = model
        self.nx = model.nx
        self.aux_lb: list[float] = []
        self.aux_names: list[str] = []
        self.rows_x: list[np.ndarray] = []
        self.rows_aux: list[dict] = []
        self.rhs: list[float] = []
        self.labels: list[str] = []
        self.eq_x: list[np.ndarray] = []
        self.eq_rhs: list[float] = []
        self.eq_labels: list[str] = []

    def aux(self, name: str, lb: float = 0.0) -> int:
        self.aux_lb.append(lb)
        self.aux_names.append(name)
        return self.nx + len(self.aux_lb) - 1

    def le(self, coef_x, aux: dict, const: float, label: str):
        """Add ``coef_x.x + sum(aux) + const <= 0``."""
        self.rows_x.append(np.asarray(coef_x, dtype=float))
        self.rows_aux.append(dict(aux))
        self.rhs.append(-float(const))
        self.labels.append(label)

    def le_many(self, coef_x: np.ndarray, aux: dict, const: np.ndarray, label: str):
        for cx, cc in zip(coef_x, const):
            self.le(cx, aux, cc, label)

    def eq(self, coef_x, const, label):
        self.eq_x.append(np.asarray(coef_x, dtype=float))
        self.eq_rhs.append(-float(const))
        self.eq_labels.append(label)

    def abs_bound(self, affine_const: float, affine_x: np.ndarray, name: str) -> int:
        """New column t with t >= |const + affine_x.x|."""
        t = self.aux(name)
        self.le(affine_x, {t: -1.0}, affine_const, name)
        self.le(-affine_x, {t: -1.0}, -affine_const, name)
        return t

    def build(self, sense: str, obj_x, obj_aux: dict, obj_const: float) -> ConcreteLP:
        m = self.model
        n = self.nx + len(self.aux_lb)
        A = np.zeros((len(self.rhs), n))
        for i, (rx, ra) in enumerate(zip(self.rows_x, self.rows_aux)):
            A[i, :self.nx] = rx
            for j, v in ra.items():
                A[i, j] += v
        Aeq = np.zeros((len(self.eq_rhs), n))
        for i, rx in enumerate(self.eq_x):
            Aeq[i, :self.nx] = rx
        c = np.zeros(n)
        c[:self.nx] = obj_x
        for j, v in obj_aux.items():
            c[j] += v
        return ConcreteLP(
            sense=sense, c=c, c0=obj_const, A_ub=A, b_ub=np.array(self.rhs), A_eq=Aeq,
            b_eq=np.array(self.eq_rhs),
            lb=np.concatenate([m.lb, self.aux_lb]), ub=np.concatenate([m.ub, np.full(len(self.aux_lb), np.inf)]),
            integer=np.concatenate([m.integer, np.zeros(len(self.aux_lb), dtype=bool)]),
            names=m.decision_names() + self.aux_names, n_decisions=self.nx,
            ub_labels=self.labels, eq_labels=self.eq_labels)


def _split(model: LinearModel, row):
    d0, dx, cp, Cpx = model.row_parts(row)
    return d0, dx, cp, Cpx.toarray()


def _certain_rows(b: _Builder, model: LinearModel, r: int):
    d0, dx, cp, Cpx = _split(model, model.rows[r])
    label = f"c{model.origin[r]}"
    if model.relation[r] == "eq":
        b.eq(dx, d0, label)
    else:
        b.le(dx, {}, d0, label)


def _loss_rows(model: LinearModel, r: int):
    """Uncertain row r as one or two ``<= 0`` split forms."""
    parts = _split(model, model.rows[r])
    if model.relation[r] == "eq":
        d0, dx, cp, Cpx = parts
        return [parts, (-d0, -dx, -cp, -Cpx)]
    return [parts]


def _objective_loss(model: LinearModel):
    """Objective as a loss to minimize: sign-flipped for max problems."""
    sgn = 1.0 if model.sense == "min" else -1.0
    d0, dx, cp, Cpx = _split(model, model.objective)
    return sgn, (sgn * d0, sgn * dx, sgn * cp, sgn * Cpx)


def _emit(b: _Builder, model: LinearModel, sgn: float, obj_x, obj_aux, obj_const) -> ConcreteLP:
    aux = {j: sgn * v for j, v in obj_aux.items()}
    return b.build(model.sense, sgn * np.asarray(obj_x), aux, sgn * obj_const)


def build_dm(model: LinearModel, samples: SampleSet) -> ConcreteLP:
    """Nominal model at the empirical mean of the training samples."""
    P = scenario_matrix(model, samples)
    return substitute_params(model, P.mean(axis=0))


def build_saa(model: LinearModel, samples: SampleSet) -> ConcreteLP:
    """Averaged objective; uncertain rows enforced for every training scenario."""
    P = scenario_matrix(model, samples)
    b = _Builder(model)
    for r in model.active:
        if not model.is_uncertain(r):
            _certain_rows(b, model, r)
            continue
        for k, (d0, dx, cp, Cpx) in enumerate(_loss_rows(model, r)):
            const = d0 + P @ cp
            coef = dx[None, :] + P @ Cpx
            if model.relation[r] == "eq" and k == 0:
                for cx, cc in zip(coef, const):
                    b.eq(cx, cc, f"c{model.origin[r]}")
                break
            b.le_many(coef, {}, const, f"c{model.origin[r]}")
    sgn, (d0, dx, cp, Cpx) = _objective_loss(model)
    pbar = P.mean(axis=0)
    return _emit(b, model, sgn, dx + pbar @ Cpx, {}, d0 + cp @ pbar)


def _box_terms(b: _Builder, center, half, d0, dx, cp, Cpx, name):
    """Worst case of ``d(x) + c(x).p`` over the box as (coef_x, aux, const)."""
    coef = dx + center @ Cpx
    const = d0 + cp @ center
    aux = {}
    for k in np.flatnonzero(half > 0):
        if not Cpx[k].any():
            const += half[k] * abs(cp[k])
            continue
        t = b.abs_bound(half[k] * cp[k], half[k] * Cpx[k], f"{name}_t{k}")
        aux[t] = 1.0
    return coef, aux, const


def build_ro_box(model: LinearModel, box: BoxSet) -> ConcreteLP:
    """Robust counterpart over a box; the objective is robustified via its epigraph."""
    center = model.param_vector(box.center)
    half = model.param_vector(box.halfwidth)
    if np.any(half < 0):
        raise ValueError("box lower bound exceeds upper bound")
    b = _Builder(model)
    for r in model.active:
        if not model.is_uncertain(r):
            _certain_rows(b, model, r)
            continue
        for k, parts in enumerate(_loss_rows(model, r)):
            coef, aux, const = _box_terms(b, center, half, *parts, name=f"r{r}_{k}")
            b.le(coef, aux, const, f"c{model.origin[r]}")
    sgn, parts = _objective_loss(model)
    coef, aux, const = _box_terms(b, center, half, *parts, name="obj")
    return _emit(b, model, sgn, coef, aux, const)


def _dual_norm(b: _Builder, cp, Cpx, norm: str, name: str):
    """Upper bound of ``||cp + Cpx x||_*`` as (aux dict, const)."""
    if norm == "L2":
        raise UnsupportedNorm("an L2 ground norm needs a second-order cone")
    dep = np.array([Cpx[k].any() for k in range(cp.size)], dtype=bool)
    if norm == "L1":          # dual is the max-norm
        floor = float(np.max(np.abs(cp[~dep]), initial=0.0))
        if not dep.any():
            return {}, floor
        s = b.aux(f"{name}_s", lb=floor)
        for k in np.flatnonzero(dep):
            b.le(Cpx[k], {s: -1.0}, cp[k], f"{name}_s")
            b.le(-Cpx[k], {s: -1.0}, -cp[k], f"{name}_s")
        return {s: 1.0}, 0.0
    const = float(np.abs(cp[~dep]).sum())   # Linf ground: dual is the 1-norm
    aux = {}
    for k in np.flatnonzero(dep):
        aux[b.abs_bound(cp[k], Cpx[k], f"{name}_t{k}")] = 1.0
    return aux, const


def build_dro_wasserstein(model: LinearModel, ball: WassersteinBall,
                          constraint_mode: str = "scenario") -> ConcreteLP:
    """Type-1 Wasserstein counterpart with unbounded support.

    The worst-case expectation of ``d(x) + c(x).p`` is the sample average
    plus ``radius * ||c(x)||_*``. The objective always uses that form.
    Uncertain rows use it too in ``"expectation"`` mode; in ``"scenario"``
    mode each training scenario must hold after an adversarial shift of
    size ``radius``, which reduces to the SAA rows when the radius is 0.
    """
    P = ball.samples
    if P.shape[1] != model.np_:
        raise ValueError(f"ball has {P.shape[1]} coordinates, model has {model.np_} uncertain entries")
    eps = ball.radius
    b = _Builder(model)
    for r in model.active:
        if not model.is_uncertain(r):
            _certain_rows(b, model, r)
            continue
        label = f"c{model.origin[r]}"
        for k, (d0, dx, cp, Cpx) in enumerate(_loss_rows(model, r)):
            if eps > 0:
                aux, nconst = _dual_norm(b, cp, Cpx, ball.norm, f"r{r}_{k}")
                aux = {j: eps * v for j, v in aux.items()}
                nconst *= eps
            else:
                aux, nconst = {}, 0.0
            if constraint_mode == "expectation":
                pbar = P.mean(axis=0)
                b.le(dx + pbar @ Cpx, aux, d0 + cp @ pbar + nconst, label)
            else:
                b.le_many(dx[None, :] + P @ Cpx, aux, d0 + P @ cp + nconst, label)
    sgn, (d0, dx, cp, Cpx) = _objective_loss(model)
    pbar = P.mean(axis=0)
    aux, nconst = ({}, 0.0) if eps == 0 else _dual_norm(b, cp, Cpx, ball.norm, "obj")
    aux = {j: eps * v for j, v in aux.items()}
    return _emit(b, model, sgn, dx + pbar @ Cpx, aux, d0 + cp @ pbar + eps * nconst)


def worst_case_expectation(c: np.ndarray, d: float, samples: np.ndarray, radius: float,
                           norm: str = "L1") -> float:
    """Closed-form sup of E[d + c.p] over a type-1 Wasserstein ball (unbounded support)."""
    c = np.asarray(c, dtype=float)
    if norm == "L2":
        raise UnsupportedNorm("L2")
    dual = np.abs(c).max(initial=0.0) if norm == "L1" else np.abs(c).sum()
    return float(d + np.mean(np.asarray(samples) @ c) + radius * dual)


def build(model: LinearModel, config: ParadigmConfig, samples: SampleSet) -> ConcreteLP:
    """Counterpart of ``model`` under ``config`` from training samples only."""
    _training(samples)
    if config.kind == "DM":
        return build_dm(model, samples)
    if config.kind == "SAA":
        return build_saa(model, samples)
    if config.kind == "RO_Box":
        return build_ro_box(model, calibrate_box(samples))
    if config.norm == "L2":
        raise UnsupportedNorm("an L2 ground norm needs a second-order cone")
    ball = WassersteinBall(scenario_matrix(model, samples), scale_radius(config, samples),
                           config.norm)
    return build_dro_wasserstein(model, ball, config.constraint_mode)
