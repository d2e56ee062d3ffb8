"""Imbalance-aware evaluation: per-class precision/recall/F1, weighted F1,
ROC curve and AUC. The positive class throughout is NoGrad4yr (at-risk),
encoded as label 1."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class ClassReport:
    atrisk: ClassMetrics
    grad: ClassMetrics
    weighted_f1: float
    accuracy: float
    cohort_year: int
    n_cases: int

    def to_dict(self) -> dict:
        def cm(m: ClassMetrics) -> dict:
            return {"precision": m.precision, "recall": m.recall, "f1": m.f1, "support": m.support}

        return {
            "cohort_year": self.cohort_year,
            "n_cases": self.n_cases,
            "atrisk": cm(self.atrisk),
            "grad": cm(self.grad),
            "weighted_f1": self.weighted_f1,
            "accuracy": self.accuracy,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ClassReport":
        def cm(d: dict) -> ClassMetrics:
            return ClassMetrics(d["precision"], d["recall"], d["f1"], d["support"])

        return cls(
            atrisk=cm(payload["atrisk"]),
            grad=cm(payload["grad"]),
            weighted_f1=payload["weighted_f1"],
            accuracy=payload["accuracy"],
            cohort_year=payload["cohort_year"],
            n_cases=payload["n_cases"],
        )


@dataclass(frozen=True)
class RocCurve:
    fpr: tuple[float, ...]
    tpr: tuple[float, ...]
    thresholds: tuple[float, ...]
    auc: float


def confusion_counts(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionCounts:
    preds = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if preds.shape != y.shape:
        raise ValueError(f"length mismatch: {preds.shape} predictions vs {y.shape} labels")
    return ConfusionCounts(
        tp=int(np.sum((preds == 1) & (y == 1))),
        fp=int(np.sum((preds == 1) & (y == 0))),
        tn=int(np.sum((preds == 0) & (y == 0))),
        fn=int(np.sum((preds == 0) & (y == 1))),
    )


def precision_recall_f1(counts: ConfusionCounts) -> tuple[float, float, float]:
    """Zero-denominator convention: a score with an empty denominator is 0."""
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def weighted_f1(f1s: Sequence[float], supports: Sequence[int]) -> float:
    f1s = np.asarray(f1s, dtype=float)
    supports = np.asarray(supports, dtype=float)
    if supports.sum() == 0:
        raise ValueError("supports sum to zero")
    return float((f1s * supports).sum() / supports.sum())


def class_report(predictions: Sequence[int], labels: Sequence[int], cohort_year: int = 0) -> ClassReport:
    """Both classes reported; weighted F1 uses class supports as weights."""
    preds = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if preds.shape != y.shape:
        raise ValueError(f"length mismatch: {preds.shape} predictions vs {y.shape} labels")
    if preds.size == 0:
        raise ValueError("empty input")

    pos = confusion_counts(preds, y)
    p1, r1, f1_1 = precision_recall_f1(pos)
    neg = confusion_counts(1 - preds, 1 - y)
    p0, r0, f1_0 = precision_recall_f1(neg)

    support_atrisk = int(np.sum(y == 1))
    support_grad = int(np.sum(y == 0))
    return ClassReport(
        atrisk=ClassMetrics(p1, r1, f1_1, support_atrisk),
        grad=ClassMetrics(p0, r0, f1_0, support_grad),
        weighted_f1=weighted_f1([f1_1, f1_0], [support_atrisk, support_grad]),
        accuracy=float(np.mean(preds == y)),
        cohort_year=cohort_year,
        n_cases=int(preds.size),
    )


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """ROC over all distinct score thresholds; AUC by the trapezoid rule,
    which equals the Mann-Whitney pair statistic with ties counted half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: {s.shape} scores vs {y.shape} labels")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined with a single class")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    cum_tp = np.cumsum(y_sorted)
    cum_fp = np.cumsum(1 - y_sorted)
    # indices ending each group of tied scores
    boundaries = np.nonzero(np.diff(s_sorted))[0]
    group_ends = np.concatenate([boundaries, [s_sorted.size - 1]])

    fpr = [0.0]
    tpr = [0.0]
    thresholds = [float("inf")]
    for end in group_ends:
        fpr.append(cum_fp[end] / n_neg)
        tpr.append(cum_tp[end] / n_pos)
        thresholds.append(float(s_sorted[end]))
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr=tuple(fpr), tpr=tuple(tpr), thresholds=tuple(thresholds), auc=auc)


def roc_csv_lines(curve: RocCurve) -> list[str]:
    """Delimited (threshold, fpr, tpr) rows for external plotting."""
    lines = ["threshold,fpr,tpr"]
    for thr, f, t in zip(curve.thresholds, curve.fpr, curve.tpr):
        thr_txt = "inf" if np.isinf(thr) else repr(float(thr))
        lines.append(f"{thr_txt},{f!r},{t!r}")
    return lines


def render_comparison_table(primary: ClassReport, baseline: Optional[ClassReport] = None) -> str:
    """Per-cohort performance block; baseline values in parentheses."""

    def cell(value: float, base: Optional[float]) -> str:
        txt = f"{value:.2f}"
        if base is not None:
            txt += f" ({base:.2f})"
        return txt

    def count_cell(value: int, base: Optional[int]) -> str:
        txt = str(value)
        if base is not None:
            txt += f" ({base})"
        return txt

    b = baseline
    rows = [
        ["Cohort Year", "Prediction", "Precision", "Recall", "F1-score", "#Case"],
        [
            str(primary.cohort_year),
            "At-risk",
            cell(primary.atrisk.precision, b.atrisk.precision if b else None),
            cell(primary.atrisk.recall, b.atrisk.recall if b else None),
            cell(primary.atrisk.f1, b.atrisk.f1 if b else None),
            count_cell(primary.atrisk.support, b.atrisk.support if b else None),
        ],
        [
            "",
            "Graduate on time",
            cell(primary.grad.precision, b.grad.precision if b else None),
            cell(primary.grad.recall, b.grad.recall if b else None),
            cell(primary.grad.f1, b.grad.f1 if b else None),
            count_cell(primary.grad.support, b.grad.support if b else None),
        ],
        [
            "",
            "Weighted Accuracy",
            "",
            "",
            cell(primary.weighted_f1, b.weighted_f1 if b else None),
            count_cell(primary.n_cases, b.n_cases if b else None),
        ],
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows)
