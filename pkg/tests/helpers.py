"""Independent oracles and small builders shared across the test suite.

Everything here recomputes expected values by a different route than the
code under test: exhaustive enumeration for splits, pair counting for AUC,
and pseudo-inverse least squares for the regression.
"""

from __future__ import annotations

import numpy as np

from casepath.datamodel import (
    CohortPanel,
    FeatureMatrix,
    FeatureSchema,
    FeatureSpec,
    StudentRecord,
)
from casepath.tree import DecisionTree, SplitRule, TrainingFingerprint, TreeNode, split_gain


def small_schema() -> FeatureSchema:
    return FeatureSchema(
        entries=(
            FeatureSpec("gpa", "numeric", "C"),
            FeatureSpec("debt", "numeric", "D"),
            FeatureSpec("enrollment", "categorical", "C", ("Full Time", "Part Time")),
        )
    )


def make_record(student_id, year, gpa, debt, enrollment, outcome, schema=None):
    return StudentRecord(
        student_id=student_id,
        cohort_year=year,
        static_fields={},
        panel_fields={"gpa": gpa, "debt": debt, "enrollment": enrollment},
        outcome=outcome,
    )


def make_panel(rows, schema=None) -> CohortPanel:
    """rows: (student_id, year, gpa, debt, enrollment, outcome) tuples."""
    schema = schema or small_schema()
    return CohortPanel(records=tuple(make_record(*row) for row in rows), schema=schema)


def random_matrix(rng, n, p, label_rule=None) -> FeatureMatrix:
    values = rng.random((n, p)) * 100
    if label_rule is None:
        labels = (rng.random(n) < 0.4).astype(np.int64)
    else:
        labels = label_rule(values).astype(np.int64)
    return FeatureMatrix(
        values=values,
        column_names=tuple(f"f{i}" for i in range(p)),
        cohort_year=1,
        labels=labels,
    )


def brute_force_best_split(values: np.ndarray, labels: np.ndarray, min_leaf: int, criterion: str):
    """Exhaustive enumeration of every (column, midpoint) candidate.

    Returns (column, threshold) of the best strictly positive gain under
    the same tie rules the trainer documents (lowest column, then lowest
    threshold), or None when no candidate qualifies.
    """
    m, p = values.shape
    total_pos = int(labels.sum())
    parent_counts = (total_pos, m - total_pos)
    best_key = None
    best = None
    for col in range(p):
        distinct = np.unique(values[:, col])
        for a, b in zip(distinct[:-1], distinct[1:]):
            thr = float((a + b) / 2.0)
            mask = values[:, col] <= thr
            nl = int(mask.sum())
            if nl < min_leaf or (m - nl) < min_leaf:
                continue
            left_pos = int(labels[mask].sum())
            gain = split_gain(parent_counts, (left_pos, nl - left_pos), criterion)
            key = (-gain, col, thr)
            if best_key is None or key < best_key:
                best_key = key
                best = (col, thr, gain)
    if best is None or best[2] <= 0.0:
        return None
    return best[0], best[1]


def main_fixture_tree() -> DecisionTree:
    """Hand-built three-split tree whose risky leaf holds 25 vs 5 cases;
    shared by the prompt goldens and the explain tests."""
    leaf_risky = TreeNode(node_id=2, depth=2, n_atrisk=25, n_grad=5)
    leaf_mid = TreeNode(node_id=3, depth=2, n_atrisk=6, n_grad=34)
    left = TreeNode(
        node_id=1, depth=1, n_atrisk=31, n_grad=39,
        rule=SplitRule(0, "gpacumulativecurrent", 23.5), left=leaf_risky, right=leaf_mid,
    )
    leaf_safe = TreeNode(node_id=4, depth=1, n_atrisk=7, n_grad=103)
    root = TreeNode(
        node_id=0, depth=0, n_atrisk=38, n_grad=142,
        rule=SplitRule(1, "totalloandebt", 10.0), left=left, right=leaf_safe,
    )
    return DecisionTree(
        root=root,
        hyperparameters=None,
        column_names=("gpacumulativecurrent", "totalloandebt", "costofattendance"),
        fingerprint=TrainingFingerprint(180, 38, 142),
    )


def mann_whitney_auc(scores, labels) -> float:
    """Pair-counting AUC: fraction of (positive, negative) pairs ranked
    correctly, ties counted one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                wins += 0.5
    return wins / (len(pos) * len(neg))
