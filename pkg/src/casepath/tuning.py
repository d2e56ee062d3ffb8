"""Hyperparameter grid search with stratified k-fold cross-validation,
selected on mean weighted F1.

Per-fold feature transforms are refitted on the training fold only and
applied to the held-out fold, so no ranking or imputation statistic ever
leaks across the fold boundary. One deep training per (criterion,
min_samples_leaf, fold) serves the whole depth range: greedy splits are
depth-local, so the depth-d tree is the deep tree truncated at d.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datamodel import FeatureMatrix, MatrixBuilder
from .metrics import class_report
from .tree import CRITERIA, Hyperparameters, majority_by_depth, train

DEFAULT_DEPTH_RANGE = (1, 29)
DEFAULT_LEAF_RANGE = (5, 29)


@dataclass(frozen=True)
class GridSpec:
    criteria: tuple[str, ...] = CRITERIA
    depth_range: tuple[int, int] = DEFAULT_DEPTH_RANGE
    leaf_range: tuple[int, int] = DEFAULT_LEAF_RANGE
    k_folds: int = 4
    seed: int = 0

    def validate(self) -> None:
        if not self.criteria or any(c not in CRITERIA for c in self.criteria):
            raise ValueError(f"criteria must be drawn from {CRITERIA}")
        for lo, hi in (self.depth_range, self.leaf_range):
            if lo < 1 or hi < lo:
                raise ValueError("ranges must be non-empty with bounds >= 1")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")

    def depths(self) -> range:
        return range(self.depth_range[0], self.depth_range[1] + 1)

    def leaves(self) -> range:
        return range(self.leaf_range[0], self.leaf_range[1] + 1)

    def combinations(self) -> list[Hyperparameters]:
        """Cartesian product in fixed (criterion, depth, leaf) order."""
        return [
            Hyperparameters(criterion=c, max_depth=d, min_samples_leaf=s)
            for c in self.criteria
            for d in self.depths()
            for s in self.leaves()
        ]

    def to_dict(self) -> dict:
        return {
            "criteria": list(self.criteria),
            "depth_range": list(self.depth_range),
            "leaf_range": list(self.leaf_range),
            "k_folds": self.k_folds,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GridSpec":
        return cls(
            criteria=tuple(payload.get("criteria", CRITERIA)),
            depth_range=tuple(payload.get("depth_range", DEFAULT_DEPTH_RANGE)),
            leaf_range=tuple(payload.get("leaf_range", DEFAULT_LEAF_RANGE)),
            k_folds=payload.get("k_folds", 4),
            seed=payload.get("seed", 0),
        )


@dataclass(frozen=True)
class ComboResult:
    hp: Hyperparameters
    fold_scores: tuple[float, ...]
    mean: float
    std: float


@dataclass(frozen=True)
class CVResult:
    combos: tuple[ComboResult, ...]
    best: Hyperparameters
    best_mean: float
    k_folds: int


def kfold_split(n: int, labels: Sequence[int], k: int, seed: int) -> list[np.ndarray]:
    """Stratified disjoint folds covering 0..n-1, deterministic under seed.

    Indices of each class are shuffled then dealt round-robin, keeping every
    fold's class mix within one case of the global ratio.
    """
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise ValueError("labels length must equal n")
    if k > n:
        raise ValueError(f"cannot make {k} folds from {n} cases")
    if k < 2:
        raise ValueError("k must be >= 2")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("stratified folds need both classes present")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for cls in classes:
        idx = np.nonzero(y == cls)[0]
        rng.shuffle(idx)
        for j, i in enumerate(idx):
            folds[j % k].append(int(i))
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def _fold_matrices(matrix: FeatureMatrix, train_idx: np.ndarray, test_idx: np.ndarray):
    """Train/test matrices for one fold, refitting transforms on the
    training records when the matrix still carries its source rows."""
    src = matrix.source
    if src is not None:
        train_records = [src.records[i] for i in train_idx]
        test_records = [src.records[i] for i in test_idx]
        builder = MatrixBuilder(src.schema, matrix.cohort_year, src.missing_policy).fit(train_records)
        return builder.transform(train_records), builder.transform(test_records)
    train_m = FeatureMatrix(
        values=matrix.values[train_idx],
        column_names=matrix.column_names,
        cohort_year=matrix.cohort_year,
        labels=matrix.labels[train_idx],
    )
    test_m = FeatureMatrix(
        values=matrix.values[test_idx],
        column_names=matrix.column_names,
        cohort_year=matrix.cohort_year,
        labels=matrix.labels[test_idx],
    )
    return train_m, test_m


def _tie_key(mean: float, hp: Hyperparameters):
    # prefer higher mean, then shallower, then larger leaves, then criterion order
    return (-mean, hp.max_depth, -hp.min_samples_leaf, CRITERIA.index(hp.criterion))


def grid_search(matrix: FeatureMatrix, grid: GridSpec) -> CVResult:
    grid.validate()
    if matrix.labels is None:
        raise ValueError("grid search needs a labeled matrix")
    n = matrix.n_rows
    folds = kfold_split(n, matrix.labels, grid.k_folds, grid.seed)

    depth_lo, depth_hi = grid.depth_range
    scores: dict[tuple[str, int, int], list[float]] = {
        (c, d, s): [] for c in grid.criteria for d in grid.depths() for s in grid.leaves()
    }

    for fold_i in range(grid.k_folds):
        test_idx = folds[fold_i]
        train_idx = np.concatenate([folds[j] for j in range(grid.k_folds) if j != fold_i])
        train_idx.sort()
        train_m, test_m = _fold_matrices(matrix, train_idx, test_idx)
        y_test = test_m.labels
        for criterion in grid.criteria:
            for leaf in grid.leaves():
                deep = train(train_m, Hyperparameters(criterion, depth_hi, leaf))
                by_depth = majority_by_depth(deep, test_m.values, depth_hi)
                for depth in grid.depths():
                    preds = by_depth[depth]
                    wf1 = class_report(preds, y_test).weighted_f1
                    scores[(criterion, depth, leaf)].append(wf1)

    combos = []
    for hp in grid.combinations():
        fold_scores = scores[(hp.criterion, hp.max_depth, hp.min_samples_leaf)]
        mean = float(np.mean(fold_scores))
        std = float(np.std(fold_scores))
        combos.append(ComboResult(hp=hp, fold_scores=tuple(fold_scores), mean=mean, std=std))

    best_combo = min(combos, key=lambda c: _tie_key(c.mean, c.hp))
    return CVResult(combos=tuple(combos), best=best_combo.hp, best_mean=best_combo.mean, k_folds=grid.k_folds)


def cv_table_lines(result: CVResult) -> list[str]:
    """Delimited export: one row per combination plus fold columns."""
    fold_cols = ",".join(f"fold_{i + 1}" for i in range(result.k_folds))
    lines = [f"criterion,max_depth,min_samples_leaf,{fold_cols},mean,std"]
    for combo in result.combos:
        folds = ",".join(repr(s) for s in combo.fold_scores)
        lines.append(
            f"{combo.hp.criterion},{combo.hp.max_depth},{combo.hp.min_samples_leaf},"
            f"{folds},{combo.mean!r},{combo.std!r}"
        )
    return lines


def stratified_holdout(labels: Sequence[int], fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(train_idx, holdout_idx): per-class split at the given fraction."""
    if not (0.0 < fraction < 1.0):
        raise ValueError("holdout fraction must be in (0, 1)")
    y = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    holdout: list[int] = []
    for cls in np.unique(y):
        idx = np.nonzero(y == cls)[0]
        rng.shuffle(idx)
        n_hold = int(round(fraction * idx.size))
        holdout.extend(int(i) for i in idx[:n_hold])
    holdout_set = set(holdout)
    train = np.array([i for i in range(y.size) if i not in holdout_set], dtype=np.int64)
    return train, np.array(sorted(holdout), dtype=np.int64)
