"""Seeded scenario generation.

Every (seed, role, parameter symbol) triple owns an independent Philox
stream keyed by the first 128 bits of ``sha256(f"{seed}:{role}:{symbol}")``.
Adding a parameter, or regenerating one role, never shifts another stream.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, asdict

import numpy as np

from .bundle import ParameterSpec, SampleSet, ROLES

FAMILIES = ("Lognormal", "Normal", "Uniform")


class NonPositiveMean(ValueError):
    def __init__(self, symbol: str):
        super().__init__(f"{symbol}: lognormal sampling needs strictly positive means")
        self.symbol = symbol


@dataclass(frozen=True)
class GeneratorConfig:
    family: str = "Lognormal"
    cv: float = 0.3
    halfwidth_rel: float = 0.3
    seed: int = 0
    n: int = 50
    clip_nonnegative: bool = True
    round_integers: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not np.isfinite(self.cv) or self.cv <= 0:
            raise ValueError("cv must be finite and > 0")
        if not np.isfinite(self.halfwidth_rel) or self.halfwidth_rel < 0:
            raise ValueError("halfwidth_rel must be finite and >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return asdict(self)


def substream(seed: int, role: str, symbol: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{role}:{symbol}".encode()).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest[:16], "little")))


def lognormal_params(mean, cv: float):
    """(mu, sigma) of the underlying normal for a given mean and cv."""
    s2 = np.log1p(cv * cv)
    return np.log(mean) - s2 / 2, np.sqrt(s2)


def _draw(p: ParameterSpec, cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    mean = np.asarray(p.value, dtype=float)
    size = (cfg.n,) + tuple(p.shape)
    if cfg.family == "Lognormal":
        if np.any(mean <= 0):
            raise NonPositiveMean(p.symbol)
        mu, sigma = lognormal_params(mean, cfg.cv)
        out = rng.lognormal(np.broadcast_to(mu, size), sigma)
    elif cfg.family == "Normal":
        out = mean + cfg.cv * np.abs(mean) * rng.standard_normal(size)
    else:
        out = mean * (1 + rng.uniform(-cfg.halfwidth_rel, cfg.halfwidth_rel, size))
    if cfg.round_integers and p.type == "Integer":
        out = np.rint(out)   # half to even
    if cfg.clip_nonnegative and p.is_non_negative:
        out = np.maximum(out, 0.0)
    return out + 0.0         # drop negative zeros


def generate_samples(template, config: GeneratorConfig, role: str) -> SampleSet:
    """Draw ``config.n`` joint scenarios for every random parameter.

    ``template`` is a SampleSet or list of ParameterSpec; each random
    parameter's ``value`` is the target mean. Deterministic parameters are
    copied. The written ``value`` is the empirical mean of the new draws.
    """
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}")
    params = template.parameters if isinstance(template, SampleSet) else list(template)
    out = []
    for p in params:
        q = p.copy()
        if p.is_random:
            q.sample = _draw(p, config, substream(config.seed, role, p.symbol))
            q.value = q.sample.mean(axis=0)
        else:
            q.sample = None
        out.append(q)
    return SampleSet(role, config.n, out)


def perturb_relative(nominal, rho: float, seed: int, n: int) -> list[np.ndarray]:
    """``n`` copies of ``nominal`` scaled entrywise by ``1 + u``, u ~ U[-rho, rho].

    The same unit draws are reused for every rho, so perturbations are
    nested across rho for a fixed seed.
    """
    if rho < 0:
        raise ValueError("rho must be >= 0")
    nominal = np.asarray(nominal, dtype=float)
    u = substream(seed, "perturb", "").uniform(-1.0, 1.0, (n,) + nominal.shape)
    return [nominal * (1 + rho * u[k]) for k in range(n)]
