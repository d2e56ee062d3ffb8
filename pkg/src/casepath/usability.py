"""Usability ratings, blinded-session bookkeeping, dimension summaries, and
the prompt-variant effect regression.

The effect of knowledge-base prompts is estimated per dimension by OLS of
the Likert score on a with-kb indicator plus rater, case, and cohort-year
dummies, with CR1 cluster-robust standard errors grouped by rater and
t/CI degrees of freedom equal to clusters minus one.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats as scipy_stats
from scipy.linalg import qr as scipy_qr

from .explain import ExplanationBundle, VARIANT_WITH_KB

DIMENSIONS = ("Utility", "Precision", "Completeness", "TimeSaved", "Clarity", "Trust", "Fairness", "NoHarm")
SCORE_MIN, SCORE_MAX = 1, 5
LIKERT_ANCHORS = {1: "Strongly disagree", 2: "Disagree", 3: "Neutral", 4: "Agree", 5: "Strongly agree"}


class RatingValidationError(ValueError):
    def __init__(self, message: str, field: Optional[str] = None, code: str = "invalid_rating"):
        super().__init__(message)
        self.field = field
        self.code = code


class DuplicateRatingError(RatingValidationError):
    def __init__(self, bundle_id: str, rater_id: str):
        super().__init__(
            f"rating for bundle {bundle_id!r} by rater {rater_id!r} already exists",
            code="duplicate_rating",
        )


@dataclass(frozen=True)
class RatingRecord:
    rating_id: str
    bundle_id: str
    rater_id: str
    scores: dict
    comment: str = ""
    submitted_at: str = ""

    def to_dict(self) -> dict:
        return {
            "rating_id": self.rating_id,
            "bundle_id": self.bundle_id,
            "rater_id": self.rater_id,
            "scores": dict(self.scores),
            "comment": self.comment,
            "submitted_at": self.submitted_at,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RatingRecord":
        return cls(**payload)


def _rating_id(bundle_id: str, rater_id: str) -> str:
    digest = hashlib.sha256(f"{bundle_id}|{rater_id}".encode("utf-8")).hexdigest()
    return f"r-{digest[:12]}"


def validate_rating_payload(payload: dict, known_bundle_ids: Optional[set] = None) -> RatingRecord:
    """Schema-check one rating submission; raises with a JSON-pointer-style
    field reference on the first violation."""
    if not isinstance(payload, dict):
        raise RatingValidationError("rating payload must be an object")
    bundle_id = payload.get("bundle_id")
    if not isinstance(bundle_id, str) or not bundle_id:
        raise RatingValidationError("bundle_id must be a non-empty string", field="/bundle_id")
    rater_id = payload.get("rater_id")
    if not isinstance(rater_id, str) or not rater_id:
        raise RatingValidationError("rater_id must be a non-empty string", field="/rater_id")
    if known_bundle_ids is not None and bundle_id not in known_bundle_ids:
        raise RatingValidationError(f"unknown bundle_id {bundle_id!r}", field="/bundle_id", code="unknown_bundle")
    scores = payload.get("scores")
    if not isinstance(scores, dict):
        raise RatingValidationError("scores must be an object", field="/scores")
    for dim in DIMENSIONS:
        if dim not in scores:
            raise RatingValidationError(f"missing dimension {dim}", field=f"/scores/{dim}")
        value = scores[dim]
        if not isinstance(value, int) or isinstance(value, bool) or not (SCORE_MIN <= value <= SCORE_MAX):
            raise RatingValidationError(
                f"score for {dim} must be an integer in {SCORE_MIN}..{SCORE_MAX}, got {value!r}",
                field=f"/scores/{dim}",
            )
    extra = [k for k in scores if k not in DIMENSIONS]
    if extra:
        raise RatingValidationError(f"unknown dimension {extra[0]!r}", field=f"/scores/{extra[0]}")
    comment = payload.get("comment", "")
    if not isinstance(comment, str):
        raise RatingValidationError("comment must be a string", field="/comment")
    return RatingRecord(
        rating_id=_rating_id(bundle_id, rater_id),
        bundle_id=bundle_id,
        rater_id=rater_id,
        scores={dim: scores[dim] for dim in DIMENSIONS},
        comment=comment,
        submitted_at=datetime.now(timezone.utc).isoformat(),
    )


class RatingStore:
    """Single-writer JSON Lines store keyed by (bundle_id, rater_id)."""

    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()

    def load(self) -> list[RatingRecord]:
        if not os.path.exists(self.path):
            return []
        records = []
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(RatingRecord.from_dict(json.loads(line)))
        return records

    def append(self, record: RatingRecord) -> RatingRecord:
        with self._lock:
            existing = {(r.bundle_id, r.rater_id) for r in self.load()}
            if (record.bundle_id, record.rater_id) in existing:
                raise DuplicateRatingError(record.bundle_id, record.rater_id)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record.to_dict(), sort_keys=True))
                fh.write("\n")
        return record


def ingest_ratings(path: str, store: RatingStore, known_bundle_ids: Optional[set] = None) -> list[RatingRecord]:
    """Import a scoring-sheet CSV (bundle id, the 8 dimensions, rater id,
    optional comment); every row validated, duplicates rejected."""
    required = ["bundle_id", *DIMENSIONS, "rater_id"]
    stored = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(ln for ln in fh if not ln.startswith("#"))
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise RatingValidationError(f"ratings file missing column {missing[0]!r}")
        for row_num, row in enumerate(reader, start=1):
            scores = {}
            for dim in DIMENSIONS:
                raw = (row.get(dim) or "").strip()
                try:
                    scores[dim] = int(raw)
                except ValueError:
                    raise RatingValidationError(
                        f"row {row_num}: score for {dim} is not an integer: {raw!r}", field=f"/scores/{dim}"
                    )
            payload = {
                "bundle_id": (row.get("bundle_id") or "").strip(),
                "rater_id": (row.get("rater_id") or "").strip(),
                "scores": scores,
                "comment": (row.get("comment") or "").strip(),
            }
            record = validate_rating_payload(payload, known_bundle_ids)
            stored.append(store.append(record))
    return stored


# ---------------------------------------------------------------------------
# Dimension summaries (mean / sample SD / n per dimension)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DimensionSummary:
    dimension: str
    mean: float
    sd: float
    n: int

    def format_line(self) -> str:
        return f"{self.dimension}: Mean = {self.mean:.2f}, SD = {self.sd:.2f} (n = {self.n})"


def summarize(ratings: Sequence[RatingRecord]) -> list[DimensionSummary]:
    if not ratings:
        raise ValueError("no ratings to summarize")
    out = []
    for dim in DIMENSIONS:
        values = np.asarray([r.scores[dim] for r in ratings], dtype=float)
        sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
        out.append(DimensionSummary(dimension=dim, mean=float(np.mean(values)), sd=sd, n=int(values.size)))
    return out


def summary_csv_lines(summaries: Iterable[DimensionSummary]) -> list[str]:
    lines = ["dimension,mean,sd,n"]
    lines.extend(f"{s.dimension},{s.mean!r},{s.sd!r},{s.n}" for s in summaries)
    return lines


# ---------------------------------------------------------------------------
# Fixed-effects regression with cluster-robust (CR1) standard errors
# ---------------------------------------------------------------------------

FIXED_EFFECT_GROUPS = ("rater_id", "case_id", "cohort_year")
FEW_CLUSTERS_THRESHOLD = 5


@dataclass(frozen=True)
class RegressionObservation:
    score: float
    with_kb: bool
    rater_id: str
    case_id: str
    cohort_year: int


@dataclass(frozen=True)
class RegressionEntry:
    dimension: str
    beta: float
    se: float
    t_stat: float
    p_value: float
    ci_low: float
    ci_high: float
    n_obs: int
    n_clusters: int
    few_clusters_warning: bool

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "beta": self.beta,
            "se": self.se,
            "t_stat": self.t_stat,
            "p_value": self.p_value,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "few_clusters_warning": self.few_clusters_warning,
        }


@dataclass(frozen=True)
class RegressionReport:
    entries: tuple[RegressionEntry, ...]
    fixed_effects: tuple[str, ...] = FIXED_EFFECT_GROUPS

    def to_dict(self) -> dict:
        return {"fixed_effects": list(self.fixed_effects), "entries": [e.to_dict() for e in self.entries]}


class RankDeficiencyError(ValueError):
    def __init__(self, columns: list[str]):
        super().__init__(f"design matrix is rank deficient; collinear columns: {columns}")
        self.columns = columns


@dataclass(frozen=True)
class OlsClusterResult:
    beta: np.ndarray
    vcov: np.ndarray
    n_obs: int
    n_params: int
    n_clusters: int


def ols_cluster_robust(X: np.ndarray, y: np.ndarray, cluster_ids: Sequence, column_names=None) -> OlsClusterResult:
    """OLS via least squares with CR1 cluster-robust covariance.

    V = c * (X'X)^-1 (sum_g X_g' u_g u_g' X_g) (X'X)^-1,
    c = (G/(G-1)) * ((n-1)/(n-k)). With every observation its own cluster
    this reduces exactly to the HC1 heteroskedasticity-robust estimator.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    names = list(column_names) if column_names is not None else [f"x{j}" for j in range(k)]
    if n <= k:
        raise ValueError(f"{n} observations cannot identify {k} coefficients")
    rank = np.linalg.matrix_rank(X)
    if rank < k:
        _, _, pivots = scipy_qr(X, pivoting=True)
        raise RankDeficiencyError(sorted(names[j] for j in pivots[rank:]))
    clusters = sorted(set(cluster_ids))
    if len(clusters) < 2:
        raise ValueError("cluster-robust errors need at least 2 clusters")

    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    residuals = y - X @ beta
    bread = np.linalg.inv(X.T @ X)
    meat = np.zeros((k, k))
    ids = np.asarray(cluster_ids)
    for cluster in clusters:
        mask = ids == cluster
        xg_ug = X[mask].T @ residuals[mask]
        meat += np.outer(xg_ug, xg_ug)
    g = len(clusters)
    c = (g / (g - 1)) * ((n - 1) / (n - k))
    vcov = c * bread @ meat @ bread
    return OlsClusterResult(beta=beta, vcov=vcov, n_obs=n, n_params=k, n_clusters=g)


def _design_matrix(observations: Sequence[RegressionObservation]) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Intercept + kb indicator + dummy blocks with one reference level
    dropped per fixed-effect group."""
    y = np.asarray([o.score for o in observations], dtype=float)
    cols = [np.ones(len(observations)), np.asarray([1.0 if o.with_kb else 0.0 for o in observations])]
    names = ["intercept", "with_kb"]
    groups = (
        ("rater", sorted({o.rater_id for o in observations}), lambda o: o.rater_id),
        ("case", sorted({o.case_id for o in observations}), lambda o: o.case_id),
        ("year", sorted({o.cohort_year for o in observations}), lambda o: o.cohort_year),
    )
    for prefix, levels, key in groups:
        for level in levels[1:]:  # first level is the reference
            cols.append(np.asarray([1.0 if key(o) == level else 0.0 for o in observations]))
            names.append(f"{prefix}={level}")
    return np.column_stack(cols), y, names


def fe_regression(observations: Sequence[RegressionObservation], dimension: str = "") -> RegressionEntry:
    """OLS of score on the kb indicator plus fixed-effect dummies.

    SEs are CR1 cluster-robust by rater:
    V = c * (X'X)^-1 (sum_g X_g' u_g u_g' X_g) (X'X)^-1 with
    c = (G/(G-1)) * ((n-1)/(n-k)); t and the 90% CI use df = G - 1.
    """
    obs = list(observations)
    if not obs:
        raise ValueError("no observations")
    kb_values = {o.with_kb for o in obs}
    if len(kb_values) < 2:
        raise ValueError("both prompt variants must be present")
    clusters = sorted({o.rater_id for o in obs})
    if len(clusters) < 2:
        raise ValueError("cluster-robust errors need at least 2 clusters (raters)")

    X, y, names = _design_matrix(obs)
    result = ols_cluster_robust(X, y, [o.rater_id for o in obs], column_names=names)

    kb_idx = names.index("with_kb")
    beta_kb = float(result.beta[kb_idx])
    se = float(np.sqrt(result.vcov[kb_idx, kb_idx]))
    g = result.n_clusters
    df = g - 1
    t_stat = beta_kb / se if se > 0 else float("inf")
    p_value = float(2.0 * scipy_stats.t.sf(abs(t_stat), df)) if se > 0 else 0.0
    t_crit = float(scipy_stats.t.ppf(0.95, df))
    return RegressionEntry(
        dimension=dimension,
        beta=beta_kb,
        se=se,
        t_stat=float(t_stat),
        p_value=p_value,
        ci_low=beta_kb - t_crit * se,
        ci_high=beta_kb + t_crit * se,
        n_obs=result.n_obs,
        n_clusters=g,
        few_clusters_warning=g < FEW_CLUSTERS_THRESHOLD,
    )


def join_observations(
    ratings: Sequence[RatingRecord], bundles: Sequence[ExplanationBundle], dimension: str
) -> list[RegressionObservation]:
    by_id = {b.bundle_id: b for b in bundles}
    obs = []
    for rating in ratings:
        bundle = by_id.get(rating.bundle_id)
        if bundle is None:
            raise ValueError(f"rating {rating.rating_id} references unknown bundle {rating.bundle_id!r}")
        obs.append(
            RegressionObservation(
                score=float(rating.scores[dimension]),
                with_kb=bundle.variant == VARIANT_WITH_KB,
                rater_id=rating.rater_id,
                case_id=bundle.student_id,
                cohort_year=bundle.cohort_year,
            )
        )
    return obs


def regression_report(ratings: Sequence[RatingRecord], bundles: Sequence[ExplanationBundle]) -> RegressionReport:
    entries = []
    for dim in DIMENSIONS:
        obs = join_observations(ratings, bundles, dim)
        entries.append(fe_regression(obs, dimension=dim))
    return RegressionReport(entries=tuple(entries))


# ---------------------------------------------------------------------------
# Blinded assessment sessions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SessionBundle:
    bundle_id: str
    case_alias: str
    variant: str  # hidden server-side; never serialized to raters
    student_id: str
    cohort_year: int


@dataclass(frozen=True)
class AssessmentSession:
    session_id: str
    raters: tuple[str, ...]
    bundles: tuple[SessionBundle, ...]
    blinded: bool = True

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "raters": list(self.raters),
            "blinded": self.blinded,
            "bundles": [
                {
                    "bundle_id": b.bundle_id,
                    "case_alias": b.case_alias,
                    "variant": b.variant,
                    "student_id": b.student_id,
                    "cohort_year": b.cohort_year,
                }
                for b in self.bundles
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "AssessmentSession":
        return cls(
            session_id=payload["session_id"],
            raters=tuple(payload["raters"]),
            blinded=payload.get("blinded", True),
            bundles=tuple(
                SessionBundle(
                    bundle_id=b["bundle_id"],
                    case_alias=b["case_alias"],
                    variant=b["variant"],
                    student_id=b["student_id"],
                    cohort_year=b["cohort_year"],
                )
                for b in payload["bundles"]
            ),
        )

    @classmethod
    def load(cls, path: str) -> "AssessmentSession":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def create_session(
    bundles: Sequence[ExplanationBundle], raters: Sequence[str], session_id: Optional[str] = None
) -> AssessmentSession:
    if not raters:
        raise ValueError("a session needs at least one rater")
    session_bundles = []
    for i, bundle in enumerate(bundles, start=1):
        session_bundles.append(
            SessionBundle(
                bundle_id=bundle.bundle_id,
                case_alias=f"case-{i:02d}",
                variant=bundle.variant,
                student_id=bundle.student_id,
                cohort_year=bundle.cohort_year,
            )
        )
    return AssessmentSession(
        session_id=session_id or f"s-{uuid.uuid4().hex[:8]}",
        raters=tuple(raters),
        bundles=tuple(session_bundles),
    )


def build_rater_payload(bundle: ExplanationBundle, case_alias: str) -> dict:
    """The only bundle view raters ever see: explanation text plus a case
    summary. Never includes the variant tag, the prompt, or KB text."""
    return {
        "bundle_id": bundle.bundle_id,
        "case_alias": case_alias,
        "cohort_year": bundle.cohort_year,
        "case_data": _case_section_of_prompt(bundle.prompt),
        "explanation": bundle.response,
    }


def _case_section_of_prompt(prompt: str) -> str:
    lines = prompt.splitlines()
    start = None
    for i, ln in enumerate(lines):
        if ln.startswith("## Case Data"):
            start = i + 1
        elif start is not None and (ln.startswith("## ") or ln.startswith("# ")):
            return "\n".join(lines[start:i]).strip("\n")
    return "\n".join(lines[start:]).strip("\n") if start is not None else ""
