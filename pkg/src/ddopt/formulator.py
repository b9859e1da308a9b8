"""Model authors: turn a problem (without truth or testing data) into a LinearModel.

Two authors ship. :class:`TruthAuthor` compiles truth.json and is the
offline baseline. :class:`LLMAuthor` asks a chat-completions endpoint for a
declarative model document, validates it, and retries with structured
feedback. Neither author ever sees testing samples; the LLM author never
sees truth.json either.
"""
from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from string import Template
from typing import Callable, Protocol

from . import expr
from .bundle import (DecisionSpec, ParameterSpec, ProblemBundle, SampleSet, TruthSpec,
                     decisions_to_dict)
from .canonical import LinearModel, LoweringError, lower_to_model

log = logging.getLogger(__name__)

ENV_BASE_URL = "DDOPT_LLM_BASE_URL"
ENV_API_KEY = "DDOPT_LLM_API_KEY"
ENV_MODEL = "DDOPT_LLM_MODEL"


class PreconditionFailure(Exception):
    pass


class TransportFailure(Exception):
    pass


class MalformedModelDocument(Exception):
    def __init__(self, details: list[str]):
        super().__init__("; ".join(details))
        self.details = list(details)


class AttemptsExhausted(Exception):
    def __init__(self, transcript: list[tuple[int, str]]):
        super().__init__(f"no valid model after {len(transcript)} attempts")
        self.transcript = list(transcript)


@dataclass
class AuthorView:
    """What an author may see: the problem statement and in-sample data."""
    name: str
    description: str
    decisions: list[DecisionSpec]
    training: SampleSet | None

    @property
    def parameters(self) -> list[ParameterSpec]:
        return [] if self.training is None else self.training.parameters


def author_view(bundle: ProblemBundle) -> AuthorView:
    return AuthorView(bundle.name, bundle.description, bundle.decisions, bundle.training)


class ModelAuthor(Protocol):
    name: str

    def author(self, bundle: ProblemBundle) -> LinearModel: ...


def author_with_truth(bundle: ProblemBundle) -> LinearModel:
    if bundle.truth is None:
        raise PreconditionFailure(f"{bundle.name}: truth.json is required")
    return lower_to_model(bundle.truth, author_view(bundle))


class TruthAuthor:
    name = "truth"

    def author(self, bundle: ProblemBundle) -> LinearModel:
        return author_with_truth(bundle)


# --- LLM path ------------------------------------------------------------------------

@dataclass
class ReflexionPolicy:
    max_attempts: int = 3
    transcript: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


def _template(name: str) -> str:
    return resources.files("ddopt").joinpath("data", "prompts", name).read_text(encoding="utf-8")


def training_summary(view: AuthorView) -> list[dict]:
    """Parameter metadata plus the training mean; raw samples are not sent."""
    out = []
    for p in view.parameters:
        out.append({"symbol": p.symbol, "meaning": p.meaning, "shape": list(p.shape),
                    "type": p.type, "is_random": int(p.is_random),
                    "is_non_negative": int(p.is_non_negative),
                    "mean": (p.sample.mean(axis=0) if p.is_random and p.sample is not None
                             else p.value).tolist()})
    return out


def build_payload(view: AuthorView, model: str, feedback: list[tuple[int, str]]) -> dict:
    user = Template(_template("formulate.txt")).substitute(
        description=view.description.strip(),
        decisions=json.dumps(decisions_to_dict(view.decisions)["decision_variables"], indent=2),
        parameters=json.dumps(training_summary(view), indent=2))
    messages = [{"role": "system", "content": _template("system.txt").strip()},
                {"role": "user", "content": user}]
    for attempt, text in feedback:
        messages.append({"role": "user", "content":
                         f"Attempt {attempt} was rejected:\n{text}\nReturn a corrected JSON object."})
    return {"model": model, "messages": messages, "temperature": 0}


Transport = Callable[[dict], str]


class ReplayTransport:
    """Offline transport that answers from a fixed list and records requests."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.requests: list[dict] = []

    def __call__(self, payload: dict) -> str:
        self.requests.append(json.loads(json.dumps(payload)))
        if not self.responses:
            raise TransportFailure("replay transcript exhausted")
        r = self.responses.pop(0)
        return r if isinstance(r, str) else json.dumps(r)


class HttpTransport:
    """OpenAI-compatible ``/chat/completions`` client."""

    def __init__(self, base_url: str | None = None, api_key: str | None = None,
                 timeout: float = 120.0):
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, "")).rstrip("/")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.timeout = timeout
        if not self.base_url:
            raise TransportFailure(f"no endpoint configured (set {ENV_BASE_URL})")

    def __call__(self, payload: dict) -> str:
        import httpx
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            r = httpx.post(f"{self.base_url}/chat/completions", json=payload, headers=headers,
                           timeout=self.timeout)
            r.raise_for_status()
            return r.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as e:
            raise TransportFailure(str(e)) from e


def _extract_json(text: str) -> dict:
    m = re.search(r"```(?:json)?\s*(.*?)```", text, re.S)
    body = m.group(1) if m else text
    start, end = body.find("{"), body.rfind("}")
    if start < 0 or end < start:
        raise MalformedModelDocument(["response holds no JSON object"])
    try:
        doc = json.loads(body[start:end + 1])
    except json.JSONDecodeError as e:
        raise MalformedModelDocument([f"invalid JSON: {e}"]) from None
    if not isinstance(doc, dict):
        raise MalformedModelDocument(["top level must be an object"])
    return doc


def parse_model_document(text: str, view: AuthorView) -> LinearModel:
    """Validate a model document against the view and lower it."""
    doc = _extract_json(text)
    errs = []
    sense = doc.get("problem_type")
    if sense not in ("min", "max"):
        errs.append("problem_type must be 'min' or 'max'")
    cons = doc.get("constraints")
    if not isinstance(cons, list) or not all(isinstance(c, str) for c in cons):
        errs.append("constraints must be a list of strings")
        cons = []
    obj = doc.get("objective")
    if not isinstance(obj, str):
        errs.append("objective must be a string")
        obj = None

    want = {d.symbol: list(d.shape) for d in view.decisions}
    got = {}
    for d in doc.get("decision_variables") or []:
        if isinstance(d, dict) and "symbol" in d:
            got[d["symbol"]] = list(d.get("shape", []))
    if got and got != want:
        errs.append(f"decision_variables must be exactly {json.dumps(want)}")

    known = set(want) | {p.symbol for p in view.parameters}
    shapes = {p.symbol: list(p.shape) for p in view.parameters}
    for p in doc.get("parameters") or []:
        if not isinstance(p, dict) or p.get("symbol") not in shapes:
            errs.append(f"unknown parameter entry {json.dumps(p)}")
        elif "shape" in p and list(p["shape"]) != shapes[p["symbol"]]:
            errs.append(f"parameter {p['symbol']} has shape {shapes[p['symbol']]}")

    for where, text_, parse in [(f"constraints[{i}]", c, expr.parse_expr) for i, c in enumerate(cons)] + \
            ([("objective", obj, expr.parse_objective)] if obj else []):
        try:
            node = parse(text_)
        except expr.ExprError as e:
            errs.append(f"{where}: {e}")
            continue
        unknown = expr.free_symbols(node) - known
        if unknown:
            errs.append(f"{where}: unknown symbols {sorted(unknown)}")
    if errs:
        raise MalformedModelDocument(errs)
    try:
        return lower_to_model(TruthSpec(list(cons), obj, sense), view)
    except (LoweringError, expr.ExprError) as e:
        raise MalformedModelDocument([f"{type(e).__name__}: {e}"]) from None


def author_with_llm(view: AuthorView, transport: Transport, policy: ReflexionPolicy | None = None,
                    model: str | None = None) -> LinearModel:
    """Request, validate and retry until a model lowers or attempts run out."""
    policy = policy or ReflexionPolicy()
    model = model or os.environ.get(ENV_MODEL, "default")
    for attempt in range(1, policy.max_attempts + 1):
        reply = transport(build_payload(view, model, policy.transcript))
        try:
            lm = parse_model_document(reply, view)
        except MalformedModelDocument as e:
            log.info("%s: attempt %d rejected: %s", view.name, attempt, e)
            policy.transcript.append((attempt, "\n".join(e.details)))
            continue
        policy.transcript.append((attempt, "ok"))
        return lm
    raise AttemptsExhausted(policy.transcript)


class LLMAuthor:
    name = "llm"

    def __init__(self, transport: Transport | None = None, max_attempts: int = 3,
                 model: str | None = None):
        self.transport = transport
        self.max_attempts = max_attempts
        self.model = model
        self.last_policy: ReflexionPolicy | None = None

    def author(self, bundle: ProblemBundle) -> LinearModel:
        transport = self.transport or HttpTransport()
        self.last_policy = ReflexionPolicy(self.max_attempts)
        return author_with_llm(author_view(bundle), transport, self.last_policy, self.model)


def get_author(name: str, **kw) -> ModelAuthor:
    if name == "truth":
        return TruthAuthor()
    if name == "llm":
        return LLMAuthor(**kw)
    raise ValueError(f"unknown author {name!r}")
