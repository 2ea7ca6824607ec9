"""Deceptive reasoning chains built backward from a target planning error.

A chain walks the perception -> prediction -> plan pipeline in reverse: start
from the wrong plan, invent the prediction that would justify it, then the
perception that would justify that, and finally join the parts front to back
into one sentence. Generation comes either from the bundled deterministic
template bank or from an external text-generation endpoint (single JSON POST);
endpoint failures always fall back to the bank and get flagged, never abort.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

log = logging.getLogger(__name__)

__all__ = [
    "CONNECTOR", "STAGE_LABELS", "Stage", "DeceptiveChain",
    "ReversalTemplate", "GeneratorEndpoint", "UnknownErrorCategory",
    "load_template_bank", "generate_cause", "build_chain", "query_aggregate",
]

CONNECTOR = ", therefore "
STAGE_LABELS = ("perception", "prediction", "plan")


class UnknownErrorCategory(KeyError):
    def __init__(self, text: str, known: list[str]):
        super().__init__(
            f"no template entry matches {text!r}; known categories: {', '.join(known)}")
        self.known = known


@dataclass(frozen=True)
class Stage:
    """Position in the reasoning chain: perception(1) -> prediction(2) -> plan(3)."""

    label: str
    index: int

    def __post_init__(self):
        if self.label not in STAGE_LABELS:
            raise ValueError(f"Stage: unknown label {self.label!r}")
        if STAGE_LABELS[self.index - 1] != self.label:
            raise ValueError(f"Stage: label {self.label!r} inconsistent with index {self.index}")

    @classmethod
    def plan(cls):
        return cls("plan", 3)

    @classmethod
    def prediction(cls):
        return cls("prediction", 2)

    @classmethod
    def perception(cls):
        return cls("perception", 1)


@dataclass(frozen=True)
class DeceptiveChain:
    """Ordered stage texts plus their connector-joined concatenation."""

    parts: tuple[str, ...]
    stages: tuple[Stage, ...]
    combined: str
    fallback: bool = False

    def __post_init__(self):
        if len(self.parts) < 1 or any(not p for p in self.parts):
            raise ValueError("DeceptiveChain: needs at least one non-empty part")
        if [s.index for s in self.stages] != sorted(s.index for s in self.stages):
            raise ValueError("DeceptiveChain: stages out of order")
        if self.combined != CONNECTOR.join(self.parts):
            raise ValueError("DeceptiveChain: combined text does not equal joined parts")

    @classmethod
    def assemble(cls, parts: list[str], stages: list[Stage], fallback: bool = False):
        return cls(tuple(parts), tuple(stages), CONNECTOR.join(parts), fallback)


@dataclass(frozen=True)
class ReversalTemplate:
    """Deterministic cause bank: per category, one text per reasoning stage."""

    id: str
    version: int
    seed_errors: dict[str, dict[str, str]]
    generic_causes: dict[str, str]

    def __post_init__(self):
        for cat, stages in self.seed_errors.items():
            missing = [s for s in STAGE_LABELS if not stages.get(s)]
            if missing:
                raise ValueError(
                    f"ReversalTemplate: category {cat!r} lacks a complete backward "
                    f"path (missing stages: {missing})")

    def categories(self) -> list[str]:
        return list(self.seed_errors)

    def resolve(self, text: str) -> tuple[str, str] | None:
        """Find (category, stage_label) whose bank text equals ``text``."""
        for cat, stages in self.seed_errors.items():
            for label, t in stages.items():
                if t == text:
                    return cat, label
        if text in self.seed_errors:  # category id accepted in place of its plan text
            return text, "plan"
        return None

    def plan_text(self, category: str) -> str:
        if category not in self.seed_errors:
            raise UnknownErrorCategory(category, self.categories())
        return self.seed_errors[category]["plan"]


def load_template_bank(path=None) -> ReversalTemplate:
    """Load the bundled cause bank, or a user-extended one from ``path``."""
    if path is None:
        text = resources.files("cascadv.data").joinpath("templates.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    raw = json.loads(text)
    return ReversalTemplate(id=raw["id"], version=raw["version"],
                            seed_errors=raw["seed_errors"],
                            generic_causes=raw["generic_causes"])


@dataclass(frozen=True)
class GeneratorEndpoint:
    """External text-generation service: POST {"prompt": ...} -> {"text": ...}.

    Never required; the template bank is the default and the fallback. The
    auth token, if any, is read from the environment variable named here.
    """

    base_url: str
    auth_env: str = "CASCADV_GENERATOR_TOKEN"
    timeout_ms: int = 5000
    max_retries: int = 2
    max_concurrent: int = 2
    template: ReversalTemplate | None = None

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.auth_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def query(self, prompt: str) -> str:
        import requests

        last = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = requests.post(self.base_url, json={"prompt": prompt},
                                     headers=self._headers(),
                                     timeout=self.timeout_ms / 1000.0)
                resp.raise_for_status()
                text = resp.json().get("text", "")
                if not isinstance(text, str) or not text.strip():
                    raise ValueError("endpoint returned empty text")
                return text.strip()
            except Exception as exc:  # noqa: BLE001 - any failure means retry/fallback
                last = exc
                if attempt < self.max_retries:
                    time.sleep(0.1 * 2 ** attempt)
        raise ConnectionError(f"generator endpoint failed after retries: {last}")


def _cause_prompt(scene_hint: str, y_hat: str, stage: Stage) -> str:
    prev = STAGE_LABELS[stage.index - 2]
    return (f"Driving scene: {scene_hint}. The {stage.label} stage concludes: "
            f"\"{y_hat}\". State one plausible {prev}-stage cause as a single short clause.")


def _template_cause(bank: ReversalTemplate, y_hat: str, stage: Stage) -> str:
    resolved = bank.resolve(y_hat)
    if resolved is None:
        raise UnknownErrorCategory(y_hat, bank.categories())
    category, _ = resolved
    prev_label = STAGE_LABELS[stage.index - 2]
    return bank.seed_errors[category][prev_label]


def generate_cause(source, scene_hint: str, y_hat: str, stage: Stage) -> tuple[str, bool]:
    """Produce the cause text for the stage preceding ``stage``.

    Template mode is a pure function of its inputs. Endpoint mode returns the
    service's text verbatim (trimmed); on failure it falls back to the bank
    (generic per-stage causes when the text is not in the catalog) and the
    second element of the result flips to True.
    """
    if stage.index <= 1:
        raise ValueError("generate_cause: perception has no preceding stage")
    if isinstance(source, ReversalTemplate):
        return _template_cause(source, y_hat, stage), False
    if isinstance(source, GeneratorEndpoint):
        try:
            return source.query(_cause_prompt(scene_hint, y_hat, stage)), False
        except ConnectionError as exc:
            log.warning("falling back to template bank: %s", exc)
            bank = source.template or load_template_bank()
            try:
                return _template_cause(bank, y_hat, stage), True
            except UnknownErrorCategory:
                prev_label = STAGE_LABELS[stage.index - 2]
                return bank.generic_causes[prev_label], True
    raise TypeError(f"generate_cause: unsupported source {type(source).__name__}")


def build_chain(source, scene_hint: str, plan_error: str, n_stages: int = 3) -> DeceptiveChain:
    """Generate parts backward from the plan error, then assemble them forward."""
    if not 1 <= n_stages <= len(STAGE_LABELS):
        raise ValueError(f"build_chain: n_stages must be in [1, {len(STAGE_LABELS)}]")
    if isinstance(source, ReversalTemplate):
        # normalize a category id to its plan text
        plan_error = source.plan_text(plan_error) if plan_error in source.seed_errors \
            else plan_error
    stage = Stage.plan()
    parts = [plan_error]
    stages = [stage]
    fallback = False
    for _ in range(n_stages - 1):
        cause, fell_back = generate_cause(source, scene_hint, parts[0], stage)
        fallback = fallback or fell_back
        stage = Stage(STAGE_LABELS[stage.index - 2], stage.index - 1)
        parts.insert(0, cause)
        stages.insert(0, stage)
    return DeceptiveChain.assemble(parts, stages, fallback)


def query_aggregate(source, scene_hint: str, plan_errors: list[str], k: int,
                    n_stages: int = 3) -> list[DeceptiveChain]:
    """Build k chains, cycling through the given plan errors.

    Endpoint mode keeps at most ``max_concurrent`` requests in flight; partial
    failures are filled from the template bank and flagged on the chain.
    """
    if k < 1:
        raise ValueError("query_aggregate: k must be >= 1")
    if not plan_errors:
        raise ValueError("query_aggregate: need at least one plan error")
    errors = [plan_errors[i % len(plan_errors)] for i in range(k)]
    if isinstance(source, GeneratorEndpoint):
        with ThreadPoolExecutor(max_workers=max(1, source.max_concurrent)) as pool:
            futures = [pool.submit(build_chain, source, scene_hint, e, n_stages)
                       for e in errors]
            return [f.result() for f in futures]
    return [build_chain(source, scene_hint, e, n_stages) for e in errors]
