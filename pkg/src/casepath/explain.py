"""Prompt rendering, pluggable LLM backends, and explanation bundles.

Three prompt variants exist: 'basic' (tree path + case data), 'with_kb'
(adds curated best-practice entries for in-context learning), and
'zero_shot' (case data only, the baseline). Rendering is pure templating;
the templates are frozen and golden-tested byte for byte.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional, Protocol, Sequence

import numpy as np

from .datamodel import (
    KIND_NUMERIC,
    LABEL_ATRISK,
    LABEL_GRAD,
    CohortPanel,
    FittedPercentile,
)
from .metrics import ClassReport, class_report
from .tree import DecisionTree, parse_tree_text, predict, render_tree_text

log = logging.getLogger(__name__)

VARIANT_BASIC = "basic"
VARIANT_WITH_KB = "with_kb"
VARIANT_ZERO_SHOT = "zero_shot"
VARIANTS = (VARIANT_BASIC, VARIANT_WITH_KB, VARIANT_ZERO_SHOT)

PROMPT_TEMPLATE_BASIC = """\
# Task

You are given (1) a decision-tree classifier of cohort year {cohortyear} and (2) a single observation ("case data").

1. Predict the class (with probability) for the observation by traversing the tree.

2. Tabulate the decision path – at each split, compare the rule to the observation’s value in plain language (avoid formulas).

3. Key Drivers – list the 3–5 features that most strongly pushed the prediction. For each, give a one-sentence real-world interpretation.

4. Potential Ambiguities – list any features close to a split-point or otherwise uncertain that could plausibly flip the outcome if they changed slightly; explain why.

5. Keep the explanation audience-friendly (e.g., for academic advisers rather than data scientists). Use bullet points or a table where clarity is improved.

Length guideline: ≤ 500 words.

# Input

## Decision Tree

{decision_tree}

## Case Data (Numerical values are percentiles by cohort year and averaged across all years)

{case_data}

# Output Format:

- Prediction: <Grad4yr / NoGrad4yr>

- Tabulate Predictions ...

- Key Drivers ...

- Potential Ambiguities ...

- Final Highlights for Advisers ...
"""

PROMPT_TEMPLATE_WITH_KB = """\
# Task

You are given (1) a decision-tree classifier of cohort year {cohortyear}, (2) a single observation ("case data"), and (3) best practices from project managers.

1. Predict the class (with probability) for the observation by traversing the tree.
2. Tabulate the decision path – at each split, compare the rule to the observation’s value in plain language (avoid formulas).
3. Key Drivers – list the 3-5 features that most strongly pushed the prediction. For each, give a one-sentence real-world interpretation.
4. Potential Ambiguities – list any features close to a split-point or otherwise uncertain that could plausibly flip the outcome if they changed slightly; explain why.
5. Keep the explanation audience-friendly (e.g., for academic advisers rather than data scientists). Use bullet points or a table where clarity is improved.

Length guideline: ≤ 500 words.

# Input

## Decision Tree
{decision_tree}

## Case Data (Numerical values are percentiles by cohort year and averaged across all years)
{case_data}

## Best Practices from the project managers
{best_practices}

# Output Format:

- Prediction: <Grad4yr / NoGrad4yr>
- Tabulate Predictions ...
- Key Drivers ...
- Potential Ambiguities ...
- Final Highlights for Advisers ...
"""

PROMPT_TEMPLATE_ZERO_SHOT = """\
# Task

You are given a single observation ("case data") describing one student in cohort year {cohortyear} of a college scholarship program. Using only this case data, predict whether the student will graduate within four years of first enrollment (Grad4yr) or not (NoGrad4yr), and give a probability for your prediction. Briefly justify the call in plain language for academic advisers.

Length guideline: ≤ 200 words.

# Input

## Case Data (Numerical values are percentiles by cohort year and averaged across all years)

{case_data}

# Output Format:

- Prediction: <Grad4yr / NoGrad4yr>

- Rationale ...
"""


@dataclass(frozen=True)
class KbEntry:
    title: str
    text: str


@dataclass(frozen=True)
class KnowledgeBase:
    best_practices: tuple[KbEntry, ...]

    def render(self) -> str:
        blocks = [f"{i}. {e.title}\n{e.text}" for i, e in enumerate(self.best_practices, start=1)]
        return "\n\n".join(blocks)

    def to_dict(self) -> dict:
        return {"best_practices": [{"title": e.title, "text": e.text} for e in self.best_practices]}

    @classmethod
    def from_dict(cls, payload: dict) -> "KnowledgeBase":
        return cls(best_practices=tuple(KbEntry(e["title"], e["text"]) for e in payload["best_practices"]))

    @classmethod
    def from_json_file(cls, path: str) -> "KnowledgeBase":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def default_knowledge_base() -> KnowledgeBase:
    """Editable sample of intervention strategies; replace with the
    program's own playbook via the --kb flag."""
    return KnowledgeBase(
        best_practices=(
            KbEntry(
                "Academic tutoring",
                "When cumulative GPA sits in the bottom quartile, refer the student to "
                "subject-specific tutoring within two weeks and schedule a follow-up after "
                "the next grading cycle. Pair tutoring with a realistic credit load before "
                "adding new commitments.",
            ),
            KbEntry(
                "Financial counseling",
                "High cost of attendance or heavy work hours call for a financial counseling "
                "session: review unused grant aid, emergency funds, and loan options before "
                "the student cuts enrollment intensity. Avoid recommending additional debt "
                "without a repayment conversation.",
            ),
            KbEntry(
                "Mental health support",
                "Sudden drops in completed hours or enrollment changes can signal personal "
                "difficulties. Offer a referral to campus counseling services and normalize "
                "using them; never frame the referral as a consequence of poor performance.",
            ),
        )
    )


@dataclass(frozen=True)
class CaseDataRendering:
    """Per-feature 'name: value' lines in schema order; numerics are
    cohort-year percentiles averaged across the student's available years."""

    lines: tuple[str, ...]
    cohort_year: int

    @property
    def text(self) -> str:
        return "\n".join(self.lines)


def render_case_data(panel: CohortPanel, student_id: str, cohort_year: int) -> CaseDataRendering:
    schema = panel.schema
    years = panel.years_for(student_id)
    if not years:
        raise KeyError(f"student {student_id!r} not in panel")
    focal = panel.record_for(student_id, cohort_year)

    pct_maps: dict[tuple[str, int], FittedPercentile] = {}

    def percentile_of(name: str, year: int, value: float) -> Optional[float]:
        key = (name, year)
        if key not in pct_maps:
            col = [r.value(name, schema) for r in panel.for_year(year)]
            present = [v for v in col if v is not None]
            if not present:
                return None
            pct_maps[key] = FittedPercentile.fit(present)
        return pct_maps[key].apply(value)

    lines = []
    for spec in schema.entries:
        if spec.kind == KIND_NUMERIC:
            pcts = []
            for year in years:
                v = panel.record_for(student_id, year).value(spec.name, schema)
                if v is None:
                    continue
                pct = percentile_of(spec.name, year, float(v))
                if pct is not None:
                    pcts.append(pct)
            value = f"{float(np.mean(pcts)):.1f}" if pcts else "missing"
        else:
            v = focal.value(spec.name, schema)
            value = str(v) if v is not None else "missing"
        lines.append(f"{spec.name}: {value}")
    return CaseDataRendering(lines=tuple(lines), cohort_year=cohort_year)


def render_prompt(
    variant: str,
    cohort_year: int,
    tree_text: Optional[str],
    case_data: CaseDataRendering,
    kb: Optional[KnowledgeBase] = None,
) -> str:
    if variant not in VARIANTS:
        raise ValueError(f"unknown prompt variant {variant!r}")
    if variant == VARIANT_ZERO_SHOT:
        if tree_text is not None:
            raise ValueError("zero_shot prompts take no tree text")
        if kb is not None:
            raise ValueError("zero_shot prompts take no knowledge base")
        return render_zero_shot(cohort_year, case_data)
    if tree_text is None:
        raise ValueError(f"variant {variant!r} requires tree text")
    if variant == VARIANT_WITH_KB:
        if kb is None or not kb.best_practices:
            raise ValueError("variant 'with_kb' requires a non-empty knowledge base")
        return PROMPT_TEMPLATE_WITH_KB.format(
            cohortyear=cohort_year,
            decision_tree=tree_text,
            case_data=case_data.text,
            best_practices=kb.render(),
        )
    if kb is not None:
        raise ValueError("variant 'basic' takes no knowledge base")
    return PROMPT_TEMPLATE_BASIC.format(
        cohortyear=cohort_year, decision_tree=tree_text, case_data=case_data.text
    )


def render_zero_shot(cohort_year: int, case_data: CaseDataRendering) -> str:
    return PROMPT_TEMPLATE_ZERO_SHOT.format(cohortyear=cohort_year, case_data=case_data.text)


# ---------------------------------------------------------------------------
# Prediction parsing
# ---------------------------------------------------------------------------

class PredictionParseError(ValueError):
    """Response has no usable prediction line."""


@dataclass(frozen=True)
class ParsedPrediction:
    predicted_class: str
    probability: Optional[float]


_PREDICTION_LINE_RE = re.compile(r"^[\s\-\*\d\.\)]*\**\s*prediction\s*\**\s*:\s*(.+)$", re.IGNORECASE)
_CLASS_RE = re.compile(r"(nograd4yr|grad4yr)", re.IGNORECASE)
_PERCENT_RE = re.compile(r"(\d+(?:\.\d+)?)\s*%")
_PROB_RE = re.compile(r"\b(0\.\d+|1\.0+)\b")


def parse_prediction(response_text: str) -> ParsedPrediction:
    """First 'Prediction:' line wins; tolerates list markers and bold
    markup; probability read from a percentage or decimal on that line."""
    for line in response_text.splitlines():
        m = _PREDICTION_LINE_RE.match(line)
        if not m:
            continue
        rest = m.group(1)
        cls_m = _CLASS_RE.search(rest)
        if not cls_m:
            continue
        cls = LABEL_ATRISK if cls_m.group(1).lower() == "nograd4yr" else LABEL_GRAD
        prob: Optional[float] = None
        pct_m = _PERCENT_RE.search(rest)
        if pct_m:
            prob = float(pct_m.group(1)) / 100.0
        else:
            prob_m = _PROB_RE.search(rest)
            if prob_m:
                prob = float(prob_m.group(1))
        return ParsedPrediction(predicted_class=cls, probability=prob)
    raise PredictionParseError("no prediction line found in response")


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GenerationSettings:
    temperature: float = 0.0
    max_tokens: int = 800
    seed: int = 0
    retries: int = 2
    backoff_seconds: float = 0.5
    timeout_seconds: float = 60.0


class LlmBackend(Protocol):
    identity: str

    def complete(self, prompt: str, settings: GenerationSettings) -> str:  # pragma: no cover - interface
        ...


class BackendError(RuntimeError):
    """Backend call failed after retries."""


class ScriptedBackend:
    """Replays canned responses in call order; a single string repeats."""

    def __init__(self, responses):
        self.identity = "scripted"
        if isinstance(responses, str):
            self._constant: Optional[str] = responses
            self._queue: list[str] = []
        else:
            self._constant = None
            self._queue = list(responses)
        self._served = 0

    def complete(self, prompt: str, settings: GenerationSettings) -> str:
        if self._constant is not None:
            return self._constant
        if self._served >= len(self._queue):
            raise BackendError("scripted backend exhausted")
        response = self._queue[self._served]
        self._served += 1
        return response


class MockBackend:
    """Deterministic offline stand-in: reads the tree and case data back out
    of the prompt, traverses the tree, and writes a well-formed explanation.
    Pure function of (prompt, settings, seed)."""

    identity = "mock"

    def complete(self, prompt: str, settings: GenerationSettings) -> str:
        case = self._case_section(prompt)
        tree_text = self._section(prompt, "## Decision Tree")
        if tree_text is not None:
            return self._tree_response(tree_text, case)
        return self._zero_shot_response(case)

    @staticmethod
    def _section(prompt: str, heading: str) -> Optional[str]:
        lines = prompt.splitlines()
        start = None
        for i, ln in enumerate(lines):
            if ln.startswith(heading):
                start = i + 1
            elif start is not None and (ln.startswith("## ") or ln.startswith("# ")):
                return "\n".join(lines[start:i]).strip("\n")
        if start is None:
            return None
        return "\n".join(lines[start:]).strip("\n")

    def _case_section(self, prompt: str) -> dict[str, str]:
        text = self._section(prompt, "## Case Data") or ""
        case: dict[str, str] = {}
        for ln in text.splitlines():
            if ":" in ln:
                name, _, value = ln.partition(":")
                case[name.strip()] = value.strip()
        return case

    @staticmethod
    def _row_for(tree: DecisionTree, case: dict[str, str]) -> list[float]:
        row = []
        for col in tree.column_names:
            if col.endswith("__missing"):
                base = col[: -len("__missing")]
                row.append(1.0 if case.get(base) == "missing" else 0.0)
            elif "=" in col:
                base, _, cat = col.partition("=")
                row.append(1.0 if case.get(base) == cat else 0.0)
            else:
                raw = case.get(col, "missing")
                try:
                    row.append(float(raw))
                except ValueError:
                    row.append(50.0)
        return row

    def _tree_response(self, tree_text: str, case: dict[str, str]) -> str:
        from .tree import extract_path  # local import to keep module load light

        tree = parse_tree_text(tree_text)
        row = self._row_for(tree, case)
        path = extract_path(tree, row)
        steps = [
            f"  * {s.rule.column_name} is {s.value:.1f}, which is "
            f"{'at or below' if s.branch == 'left' else 'above'} the split point {s.rule.threshold:g}"
            for s in path.steps
        ]
        if not steps:
            steps = ["  * The tree has a single leaf; no splits were needed."]
        drivers = [s.rule.column_name for s in path.steps[:5]] or ["(no splitting features)"]
        pct = round(path.probability * 100)
        return "\n".join(
            [
                f"- Prediction: {path.predicted_class} ({pct}%)",
                "- Tabulate Predictions:",
                *steps,
                "- Key Drivers:",
                *[f"  * {name}: this feature moved the case along the decision path." for name in drivers],
                "- Potential Ambiguities:",
                "  * Values close to a split point above could flip the outcome if they shift slightly.",
                "- Final Highlights for Advisers:",
                f"  * The model places this case at {path.predicted_class} with probability {pct}%."
                " Review the drivers above and plan a check-in accordingly.",
            ]
        )

    @staticmethod
    def _zero_shot_response(case: dict[str, str]) -> str:
        values = []
        for raw in case.values():
            try:
                values.append(float(raw))
            except ValueError:
                continue
        mean_pct = float(np.mean(values)) if values else 50.0
        at_risk = mean_pct < 45.0
        cls = LABEL_ATRISK if at_risk else LABEL_GRAD
        prob = min(0.95, max(0.55, abs(mean_pct - 45.0) / 50.0 + 0.55))
        return "\n".join(
            [
                f"- Prediction: {cls} ({round(prob * 100)}%)",
                "- Rationale: the case's percentile profile averages "
                f"{mean_pct:.1f}, which sits {'below' if at_risk else 'at or above'} the"
                " typical range of on-time graduates in this program.",
            ]
        )


class HttpBackend:
    """Chat-completions style HTTP backend; bearer token from LLM_API_KEY."""

    def __init__(self, url: str, model: str = "default", timeout_seconds: float = 60.0):
        self.url = url
        self.model = model
        self.timeout_seconds = timeout_seconds
        self.identity = f"http:{url}:{model}"

    def complete(self, prompt: str, settings: GenerationSettings) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get("LLM_API_KEY")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": settings.temperature,
            "max_tokens": settings.max_tokens,
        }
        log.info("llm request url=%s model=%s bytes=%d auth=%s",
                 self.url, self.model, len(prompt), "bearer ***" if api_key else "none")
        response = requests.post(self.url, json=body, headers=headers, timeout=self.timeout_seconds)
        response.raise_for_status()
        payload = response.json()
        text = payload["choices"][0]["message"]["content"]
        log.info("llm response url=%s bytes=%d", self.url, len(text))
        return text


def make_backend(name: str, url: str = "", model: str = "default") -> LlmBackend:
    if name == "mock":
        return MockBackend()
    if name == "http":
        if not url:
            raise ValueError("http backend requires an endpoint url")
        return HttpBackend(url=url, model=model)
    raise ValueError(f"unknown backend {name!r}; expected 'mock' or 'http'")


# ---------------------------------------------------------------------------
# Explanation bundles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExplanationBundle:
    bundle_id: str
    student_id: str
    cohort_year: int
    variant: str
    prompt: str
    backend_identity: str
    response: str
    parsed_class: Optional[str]
    parsed_probability: Optional[float]
    parse_error: Optional[str]
    tree_class: Optional[str]
    tree_probability: Optional[float]
    status: str  # "ok" | "backend_error"
    error: Optional[str]
    created_at: str

    def to_dict(self) -> dict:
        return {
            "bundle_id": self.bundle_id,
            "student_id": self.student_id,
            "cohort_year": self.cohort_year,
            "variant": self.variant,
            "prompt": self.prompt,
            "backend_identity": self.backend_identity,
            "response": self.response,
            "parsed_class": self.parsed_class,
            "parsed_probability": self.parsed_probability,
            "parse_error": self.parse_error,
            "tree_class": self.tree_class,
            "tree_probability": self.tree_probability,
            "status": self.status,
            "error": self.error,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ExplanationBundle":
        return cls(**payload)


class BundleStore:
    """Append-only JSON Lines store, one bundle per line."""

    def __init__(self, path: str):
        self.path = path

    def append(self, bundle: ExplanationBundle) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(bundle.to_dict(), sort_keys=True))
            fh.write("\n")

    def load(self) -> list[ExplanationBundle]:
        if not os.path.exists(self.path):
            return []
        bundles = []
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    bundles.append(ExplanationBundle.from_dict(json.loads(line)))
        return bundles


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def _call_with_retries(backend: LlmBackend, prompt: str, settings: GenerationSettings) -> str:
    last_error: Optional[Exception] = None
    for attempt in range(settings.retries + 1):
        try:
            return backend.complete(prompt, settings)
        except Exception as exc:  # backend contract: any failure is retryable
            last_error = exc
            if attempt < settings.retries and settings.backoff_seconds > 0:
                time.sleep(settings.backoff_seconds * (2**attempt))
    raise BackendError(f"backend failed after {settings.retries + 1} attempts: {last_error}")


def explain_case(
    tree: DecisionTree,
    student_id: str,
    row: Sequence[float],
    rendering: CaseDataRendering,
    variant: str,
    backend: LlmBackend,
    kb: Optional[KnowledgeBase] = None,
    settings: GenerationSettings = GenerationSettings(),
) -> ExplanationBundle:
    """Render the prompt, call the backend, parse the prediction, and wrap
    everything (including the tree's own prediction) into one bundle."""
    if variant not in (VARIANT_BASIC, VARIANT_WITH_KB):
        raise ValueError(f"explain_case handles tree variants only, got {variant!r}")
    tree_text = render_tree_text(tree)
    prompt = render_prompt(variant, rendering.cohort_year, tree_text, rendering, kb)
    tree_class, tree_prob = predict(tree, row)

    status, error, response = "ok", None, ""
    parsed_class: Optional[str] = None
    parsed_prob: Optional[float] = None
    parse_error: Optional[str] = None
    try:
        response = _call_with_retries(backend, prompt, settings)
    except BackendError as exc:
        status, error = "backend_error", str(exc)
    if status == "ok":
        try:
            parsed = parse_prediction(response)
            parsed_class, parsed_prob = parsed.predicted_class, parsed.probability
        except PredictionParseError as exc:
            parse_error = str(exc)

    return ExplanationBundle(
        bundle_id=f"b-{uuid.uuid4().hex[:12]}",
        student_id=student_id,
        cohort_year=rendering.cohort_year,
        variant=variant,
        prompt=prompt,
        backend_identity=backend.identity,
        response=response,
        parsed_class=parsed_class,
        parsed_probability=parsed_prob,
        parse_error=parse_error,
        tree_class=tree_class,
        tree_probability=tree_prob,
        status=status,
        error=error,
        created_at=_now_iso(),
    )


# ---------------------------------------------------------------------------
# Zero-shot baseline evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZeroShotResult:
    report: ClassReport
    n_cases: int
    n_parsed: int
    n_fallback: int  # unparseable or failed calls, scored as Grad4yr
    bundles: tuple[ExplanationBundle, ...] = field(default=(), repr=False)

    @property
    def coverage(self) -> float:
        return self.n_parsed / self.n_cases if self.n_cases else 0.0

    def to_dict(self) -> dict:
        return {
            "report": self.report.to_dict(),
            "n_cases": self.n_cases,
            "n_parsed": self.n_parsed,
            "n_fallback": self.n_fallback,
            "coverage": self.coverage,
        }


def zero_shot_evaluate(
    panel: CohortPanel,
    cohort_year: int,
    backend: LlmBackend,
    settings: GenerationSettings = GenerationSettings(),
) -> ZeroShotResult:
    """Prompt the backend per case with data only, parse, score vs labels.

    Unparseable or failed responses count as Grad4yr predictions (the
    majority class) and are tallied as fallbacks, biasing the baseline
    upward rather than against it.
    """
    records = panel.for_year(cohort_year)
    if not records:
        raise ValueError(f"no records for cohort year {cohort_year}")
    if any(r.outcome is None for r in records):
        raise ValueError("zero-shot evaluation needs labeled records")

    predictions: list[int] = []
    labels: list[int] = []
    bundles: list[ExplanationBundle] = []
    n_parsed = 0
    for rec in records:
        rendering = render_case_data(panel, rec.student_id, cohort_year)
        prompt = render_zero_shot(cohort_year, rendering)
        status, error, response = "ok", None, ""
        parsed_class: Optional[str] = None
        parsed_prob: Optional[float] = None
        parse_error: Optional[str] = None
        try:
            response = _call_with_retries(backend, prompt, settings)
            try:
                parsed = parse_prediction(response)
                parsed_class, parsed_prob = parsed.predicted_class, parsed.probability
                n_parsed += 1
            except PredictionParseError as exc:
                parse_error = str(exc)
        except BackendError as exc:
            status, error = "backend_error", str(exc)

        predicted = parsed_class if parsed_class is not None else LABEL_GRAD
        predictions.append(1 if predicted == LABEL_ATRISK else 0)
        labels.append(1 if rec.outcome == LABEL_ATRISK else 0)
        bundles.append(
            ExplanationBundle(
                bundle_id=f"b-{uuid.uuid4().hex[:12]}",
                student_id=rec.student_id,
                cohort_year=cohort_year,
                variant=VARIANT_ZERO_SHOT,
                prompt=prompt,
                backend_identity=backend.identity,
                response=response,
                parsed_class=parsed_class,
                parsed_probability=parsed_prob,
                parse_error=parse_error,
                tree_class=None,
                tree_probability=None,
                status=status,
                error=error,
                created_at=_now_iso(),
            )
        )

    report = class_report(predictions, labels, cohort_year=cohort_year)
    return ZeroShotResult(
        report=report,
        n_cases=len(records),
        n_parsed=n_parsed,
        n_fallback=len(records) - n_parsed,
        bundles=tuple(bundles),
    )
