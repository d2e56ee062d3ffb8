"""Binary classification tree (CART-style) trained from scratch.

Class counts are always ordered (n_atrisk, n_grad). Ties at a leaf predict
the at-risk class: a false alarm costs a check-in, a missed case costs an
intervention. Training is fully deterministic; equal-gain splits resolve to
the lowest column index, then the lowest threshold.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .datamodel import LABEL_ATRISK, LABEL_GRAD

CRITERIA = ("gini", "entropy", "log_loss")


@dataclass(frozen=True)
class Hyperparameters:
    criterion: str
    max_depth: int
    min_samples_leaf: int

    def __post_init__(self) -> None:
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


@dataclass(frozen=True)
class SplitRule:
    column_index: int
    column_name: str
    threshold: float  # rows with value <= threshold go left


@dataclass
class TreeNode:
    node_id: int
    depth: int
    n_atrisk: int
    n_grad: int
    rule: Optional[SplitRule] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.rule is None

    @property
    def total(self) -> int:
        return self.n_atrisk + self.n_grad


@dataclass(frozen=True)
class TrainingFingerprint:
    n_rows: int
    n_atrisk: int
    n_grad: int
    seed: int = 0


@dataclass
class DecisionTree:
    root: TreeNode
    hyperparameters: Optional[Hyperparameters]
    column_names: tuple[str, ...]
    fingerprint: TrainingFingerprint


@dataclass(frozen=True)
class PathStep:
    node_id: int
    rule: SplitRule
    value: float
    branch: str  # "left" | "right"


@dataclass(frozen=True)
class TreePath:
    steps: tuple[PathStep, ...]
    leaf_counts: tuple[int, int]
    predicted_class: str
    probability: float


# ---------------------------------------------------------------------------
# Impurity
# ---------------------------------------------------------------------------

def _impurity_arrays(pos, neg, criterion: str):
    """Vectorized impurity from (at-risk, grad) count arrays; 0*log 0 := 0."""
    pos = np.asarray(pos, dtype=float)
    neg = np.asarray(neg, dtype=float)
    total = pos + neg
    p1 = pos / total
    p0 = neg / total
    if criterion == "gini":
        return 1.0 - p1 * p1 - p0 * p0
    log = np.log2 if criterion == "entropy" else np.log
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(p1 > 0.0, p1 * log(p1), 0.0)
        t0 = np.where(p0 > 0.0, p0 * log(p0), 0.0)
    return -(t1 + t0)


def impurity(class_counts: tuple[int, int], criterion: str) -> float:
    """Node impurity for (n_atrisk, n_grad); pure nodes score 0."""
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    a, g = class_counts
    if a < 0 or g < 0:
        raise ValueError("class counts must be non-negative")
    if a + g == 0:
        raise ValueError("impurity undefined for zero total count")
    return float(_impurity_arrays(a, g, criterion))


def split_gain(parent_counts: tuple[int, int], left_counts: tuple[int, int], criterion: str) -> float:
    """Impurity decrease of a split, weighted by child sizes."""
    pa, pg = parent_counts
    la, lg = left_counts
    ra, rg = pa - la, pg - lg
    m = pa + pg
    nl = la + lg
    nr = ra + rg
    parent = impurity(parent_counts, criterion)
    return float(parent - (nl / m) * impurity((la, lg), criterion) - (nr / m) * impurity((ra, rg), criterion))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _best_split(values: np.ndarray, labels: np.ndarray, min_leaf: int, criterion: str):
    """Best (column, threshold) by impurity decrease, or None.

    Scans every midpoint of consecutive distinct values in every column in
    one vectorized pass. Ties on gain resolve to the lowest column index,
    then the lowest threshold.
    """
    m, p = values.shape
    total_pos = int(labels.sum())
    if m < 2 * min_leaf or total_pos == 0 or total_pos == m:
        return None
    parent = _impurity_arrays(total_pos, m - total_pos, criterion)

    order = np.argsort(values, axis=0, kind="stable")
    sorted_vals = np.take_along_axis(values, order, axis=0)
    sorted_y = labels[order]
    pos_cum = np.cumsum(sorted_y, axis=0, dtype=np.int64)

    left_n = np.arange(1, m, dtype=float)[:, None]          # (m-1, 1)
    left_pos = pos_cum[:-1].astype(float)                   # (m-1, p)
    left_neg = left_n - left_pos
    right_pos = float(total_pos) - left_pos
    right_neg = (m - left_n) - right_pos

    gain = (
        parent
        - (left_n / m) * _impurity_arrays(left_pos, left_neg, criterion)
        - ((m - left_n) / m) * _impurity_arrays(right_pos, right_neg, criterion)
    )
    valid = (
        (sorted_vals[1:] > sorted_vals[:-1])
        & (left_n >= min_leaf)
        & ((m - left_n) >= min_leaf)
    )
    gain = np.where(valid, gain, -np.inf)
    best = gain.max()
    if not np.isfinite(best) or best <= 0.0:
        return None
    rows, cols = np.nonzero(gain == best)
    candidates = []
    for r, c in zip(rows.tolist(), cols.tolist()):
        thr = (sorted_vals[r, c] + sorted_vals[r + 1, c]) / 2.0
        candidates.append((c, float(thr)))
    col, thr = min(candidates)
    return col, thr


def train(matrix, hp: Hyperparameters) -> DecisionTree:
    """Greedy recursive splitting; deterministic given (matrix, hp)."""
    values = np.ascontiguousarray(matrix.values, dtype=float)
    if values.shape[0] == 0:
        raise ValueError("cannot train on an empty matrix")
    if matrix.labels is None:
        raise ValueError("training matrix has no labels")
    labels = np.asarray(matrix.labels, dtype=np.int64)
    min_leaf = hp.min_samples_leaf

    def build(idx: np.ndarray, depth: int) -> TreeNode:
        pos = int(labels[idx].sum())
        neg = int(idx.size) - pos
        node = TreeNode(node_id=-1, depth=depth, n_atrisk=pos, n_grad=neg)
        if depth >= hp.max_depth or pos == 0 or neg == 0:
            return node
        split = _best_split(values[idx], labels[idx], min_leaf, hp.criterion)
        if split is None:
            return node
        col, thr = split
        mask = values[idx, col] <= thr
        node.rule = SplitRule(column_index=col, column_name=matrix.column_names[col], threshold=thr)
        node.left = build(idx[mask], depth + 1)
        node.right = build(idx[~mask], depth + 1)
        return node

    root = build(np.arange(values.shape[0]), 0)
    _assign_ids(root)
    return DecisionTree(
        root=root,
        hyperparameters=hp,
        column_names=tuple(matrix.column_names),
        fingerprint=TrainingFingerprint(
            n_rows=int(values.shape[0]),
            n_atrisk=int(labels.sum()),
            n_grad=int(values.shape[0] - labels.sum()),
        ),
    )


def _assign_ids(root: TreeNode) -> None:
    counter = 0

    def walk(node: TreeNode) -> None:
        nonlocal counter
        node.node_id = counter
        counter += 1
        if not node.is_leaf:
            walk(node.left)
            walk(node.right)

    walk(root)


def truncate(tree: DecisionTree, max_depth: int) -> DecisionTree:
    """Copy of the tree cut at max_depth; equals retraining at that depth
    because greedy split decisions are depth-local."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")

    def copy(node: TreeNode) -> TreeNode:
        if node.is_leaf or node.depth >= max_depth:
            return TreeNode(node_id=-1, depth=node.depth, n_atrisk=node.n_atrisk, n_grad=node.n_grad)
        return TreeNode(
            node_id=-1,
            depth=node.depth,
            n_atrisk=node.n_atrisk,
            n_grad=node.n_grad,
            rule=node.rule,
            left=copy(node.left),
            right=copy(node.right),
        )

    root = copy(tree.root)
    _assign_ids(root)
    hp = replace(tree.hyperparameters, max_depth=max_depth) if tree.hyperparameters else None
    return DecisionTree(root=root, hyperparameters=hp, column_names=tree.column_names, fingerprint=tree.fingerprint)


# ---------------------------------------------------------------------------
# Prediction and path extraction
# ---------------------------------------------------------------------------

def _leaf_prediction(node: TreeNode) -> tuple[str, float]:
    if node.n_atrisk >= node.n_grad:
        return LABEL_ATRISK, node.n_atrisk / node.total
    return LABEL_GRAD, node.n_grad / node.total


def _check_row(tree: DecisionTree, row) -> np.ndarray:
    row = np.asarray(row, dtype=float)
    if row.shape != (len(tree.column_names),):
        raise ValueError(f"row has {row.shape} values, tree expects {len(tree.column_names)}")
    return row


def predict(tree: DecisionTree, row) -> tuple[str, float]:
    """Class and leaf probability for one feature vector."""
    row = _check_row(tree, row)
    node = tree.root
    while not node.is_leaf:
        node = node.left if row[node.rule.column_index] <= node.rule.threshold else node.right
    return _leaf_prediction(node)


def extract_path(tree: DecisionTree, row) -> TreePath:
    """Replay the root-to-leaf traversal; terminal prediction is identical
    to predict() on the same inputs."""
    row = _check_row(tree, row)
    node = tree.root
    steps = []
    while not node.is_leaf:
        value = float(row[node.rule.column_index])
        went_left = value <= node.rule.threshold
        steps.append(
            PathStep(node_id=node.node_id, rule=node.rule, value=value, branch="left" if went_left else "right")
        )
        node = node.left if went_left else node.right
    cls, prob = _leaf_prediction(node)
    return TreePath(steps=tuple(steps), leaf_counts=(node.n_atrisk, node.n_grad), predicted_class=cls, probability=prob)


def predict_batch(tree: DecisionTree, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized predict over matrix rows: (class int array, probabilities).

    Class encoding matches the label vector: 1 = at-risk, 0 = on-time.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    classes = np.empty(n, dtype=np.int64)
    probs = np.empty(n, dtype=float)
    stack = [(tree.root, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        if node.is_leaf:
            cls, prob = _leaf_prediction(node)
            classes[idx] = 1 if cls == LABEL_ATRISK else 0
            probs[idx] = prob
        else:
            mask = values[idx, node.rule.column_index] <= node.rule.threshold
            stack.append((node.left, idx[mask]))
            stack.append((node.right, idx[~mask]))
    return classes, probs


def atrisk_scores(tree: DecisionTree, values: np.ndarray) -> np.ndarray:
    """Per-row at-risk leaf frequency, the score swept for ROC curves."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    scores = np.empty(n, dtype=float)
    stack = [(tree.root, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        if node.is_leaf:
            scores[idx] = node.n_atrisk / node.total
        else:
            mask = values[idx, node.rule.column_index] <= node.rule.threshold
            stack.append((node.left, idx[mask]))
            stack.append((node.right, idx[~mask]))
    return scores


def majority_by_depth(tree: DecisionTree, values: np.ndarray, depth_max: int) -> np.ndarray:
    """(depth_max+1, n) class matrix: row d = predictions of the tree
    truncated at depth d. Lets one deep training serve a whole depth grid."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    out = np.empty((depth_max + 1, n), dtype=np.int64)
    stack = [(tree.root, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        cls = 1 if node.n_atrisk >= node.n_grad else 0
        if node.is_leaf or node.depth >= depth_max:
            out[node.depth :, idx] = cls
        else:
            out[node.depth, idx] = cls
            mask = values[idx, node.rule.column_index] <= node.rule.threshold
            stack.append((node.left, idx[mask]))
            stack.append((node.right, idx[~mask]))
    return out


# ---------------------------------------------------------------------------
# Text rendering (the {decision_tree} prompt slot) and its parser
# ---------------------------------------------------------------------------

def render_tree_text(tree: DecisionTree) -> str:
    lines: list[str] = []

    def walk(node: TreeNode, depth: int) -> None:
        indent = "  " * depth
        if node.is_leaf:
            cls, prob = _leaf_prediction(node)
            lines.append(f"{indent}leaf: counts=[{node.n_atrisk}, {node.n_grad}] → {cls} (p={prob:.3f})")
        else:
            lines.append(f"{indent}{node.node_id}: IF {node.rule.column_name} ≤ {node.rule.threshold!r}")
            walk(node.left, depth + 1)
            walk(node.right, depth + 1)

    walk(tree.root, 0)
    return "\n".join(lines)


_INTERNAL_RE = re.compile(r"^(\d+): IF (.+) ≤ (\S+)$")
_LEAF_RE = re.compile(r"^leaf: counts=\[(\d+), (\d+)\] → (\S+) \(p=[\d.]+\)$")


class TreeTextError(ValueError):
    """Unparseable rendered-tree text."""


def parse_tree_text(text: str) -> DecisionTree:
    """Inverse of render_tree_text up to structure: topology, rules, and
    counts round-trip; hyperparameters are not recoverable from text."""
    raw_lines = [ln for ln in text.splitlines() if ln.strip()]
    if not raw_lines:
        raise TreeTextError("empty tree text")
    parsed = []
    for ln in raw_lines:
        stripped = ln.lstrip(" ")
        indent = len(ln) - len(stripped)
        if indent % 2 != 0:
            raise TreeTextError(f"odd indentation in line {ln!r}")
        parsed.append((indent // 2, stripped))

    column_names: list[str] = []
    pos = 0

    def read(depth: int) -> TreeNode:
        nonlocal pos
        if pos >= len(parsed):
            raise TreeTextError("unexpected end of tree text")
        line_depth, content = parsed[pos]
        if line_depth != depth:
            raise TreeTextError(f"expected depth {depth}, found {line_depth}: {content!r}")
        pos += 1
        leaf_m = _LEAF_RE.match(content)
        if leaf_m:
            return TreeNode(
                node_id=-1, depth=depth, n_atrisk=int(leaf_m.group(1)), n_grad=int(leaf_m.group(2))
            )
        internal_m = _INTERNAL_RE.match(content)
        if not internal_m:
            raise TreeTextError(f"unrecognized tree line: {content!r}")
        name = internal_m.group(2)
        threshold = float(internal_m.group(3))
        if name not in column_names:
            column_names.append(name)
        left = read(depth + 1)
        right = read(depth + 1)
        node = TreeNode(
            node_id=-1,
            depth=depth,
            n_atrisk=left.n_atrisk + right.n_atrisk,
            n_grad=left.n_grad + right.n_grad,
            rule=SplitRule(column_index=column_names.index(name), column_name=name, threshold=threshold),
            left=left,
            right=right,
        )
        return node

    root = read(0)
    if pos != len(parsed):
        raise TreeTextError(f"trailing content after tree: {parsed[pos][1]!r}")
    _assign_ids(root)
    return DecisionTree(
        root=root,
        hyperparameters=None,
        column_names=tuple(column_names),
        fingerprint=TrainingFingerprint(n_rows=root.total, n_atrisk=root.n_atrisk, n_grad=root.n_grad),
    )


# ---------------------------------------------------------------------------
# JSON persistence
# ---------------------------------------------------------------------------

def serialize_tree(tree: DecisionTree) -> dict:
    nodes = []

    def walk(node: TreeNode, parent: Optional[int]) -> None:
        nodes.append(
            {
                "id": node.node_id,
                "parent": parent,
                "depth": node.depth,
                "counts": [node.n_atrisk, node.n_grad],
                "rule": None
                if node.is_leaf
                else {
                    "column_index": node.rule.column_index,
                    "column_name": node.rule.column_name,
                    "threshold": node.rule.threshold,
                },
                "left": None if node.is_leaf else node.left.node_id,
                "right": None if node.is_leaf else node.right.node_id,
            }
        )
        if not node.is_leaf:
            walk(node.left, node.node_id)
            walk(node.right, node.node_id)

    walk(tree.root, None)
    hp = tree.hyperparameters
    return {
        "format": "tree/v1",
        "hyperparameters": None
        if hp is None
        else {"criterion": hp.criterion, "max_depth": hp.max_depth, "min_samples_leaf": hp.min_samples_leaf},
        "column_names": list(tree.column_names),
        "fingerprint": {
            "n_rows": tree.fingerprint.n_rows,
            "n_atrisk": tree.fingerprint.n_atrisk,
            "n_grad": tree.fingerprint.n_grad,
            "seed": tree.fingerprint.seed,
        },
        "nodes": nodes,
    }


def deserialize_tree(payload: dict) -> DecisionTree:
    if payload.get("format") != "tree/v1":
        raise ValueError(f"unsupported tree format {payload.get('format')!r}")
    by_id = {n["id"]: n for n in payload["nodes"]}

    def build(node_id: int) -> TreeNode:
        raw = by_id[node_id]
        rule = raw["rule"]
        node = TreeNode(
            node_id=raw["id"],
            depth=raw["depth"],
            n_atrisk=raw["counts"][0],
            n_grad=raw["counts"][1],
        )
        if rule is not None:
            node.rule = SplitRule(
                column_index=rule["column_index"],
                column_name=rule["column_name"],
                threshold=rule["threshold"],
            )
            node.left = build(raw["left"])
            node.right = build(raw["right"])
        return node

    hp_raw = payload.get("hyperparameters")
    hp = None if hp_raw is None else Hyperparameters(**hp_raw)
    fp = payload["fingerprint"]
    return DecisionTree(
        root=build(payload["nodes"][0]["id"]),
        hyperparameters=hp,
        column_names=tuple(payload["column_names"]),
        fingerprint=TrainingFingerprint(
            n_rows=fp["n_rows"], n_atrisk=fp["n_atrisk"], n_grad=fp["n_grad"], seed=fp.get("seed", 0)
        ),
    )


def tree_to_json(tree: DecisionTree) -> str:
    return json.dumps(serialize_tree(tree), sort_keys=True, indent=2)


def save_tree(tree: DecisionTree, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(tree_to_json(tree))
        fh.write("\n")


def load_tree(path: str) -> DecisionTree:
    with open(path, "r", encoding="utf-8") as fh:
        return deserialize_tree(json.load(fh))
