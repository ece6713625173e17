"""In-house classifiers for utility and attribute-inference evaluation.

Features are the package's own encoding (one-hot categoricals, continuous
values scaled to [-1, 1]) with the target's segment removed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import Table, TableSchema, encode, segment_map
from ..errors import ValidationError

KINDS = ("logistic", "forest")


def feature_matrix(table: Table, target: str) -> np.ndarray:
    """Encoded rows without the target column's segment."""
    enc = encode(table).matrix
    keep = np.ones(enc.shape[1], dtype=bool)
    for seg in segment_map(table.schema):
        if seg.column == target:
            keep[seg.offset:seg.offset + seg.width] = False
    return enc[:, keep]


def _target_codes(table: Table, target: str) -> tuple[np.ndarray, int]:
    col = table.schema.column(target)
    if not col.is_categorical:
        raise ValidationError(f"target column {target!r} must be categorical")
    return np.asarray(table.column_array(target), dtype=np.int64), len(col.categories)


# -- logistic regression ------------------------------------------------------

def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class LogisticModel:
    weights: np.ndarray  # (features, classes)
    bias: np.ndarray
    iterations: int = 0

    def proba(self, x: np.ndarray) -> np.ndarray:
        return _softmax(x @ self.weights + self.bias)


def fit_logistic(x: np.ndarray, y: np.ndarray, k: int, lr: float = 0.5, l2: float = 1e-4,
                 tol: float = 1e-6, max_iter: int = 20000) -> LogisticModel:
    """Multinomial logistic regression by full-batch gradient descent.

    Stops when the loss changes by less than ``tol`` between iterations.
    A small L2 term keeps separable data from diverging.
    """
    n, d = x.shape
    onehot = np.eye(k)[y]
    w, b = np.zeros((d, k)), np.zeros(k)
    prev = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        p = _softmax(x @ w + b)
        loss = -np.mean(np.log(np.maximum(p[np.arange(n), y], 1e-300))) + 0.5 * l2 * np.sum(w * w)
        if abs(prev - loss) < tol:
            break
        prev = loss
        r = (p - onehot) / n
        w -= lr * (x.T @ r + l2 * w)
        b -= lr * r.sum(axis=0)
    return LogisticModel(w, b, it)


# -- random forest ------------------------------------------------------------

@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (nodes, classes) class frequencies at each node

    def proba(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = x[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.value[node]


def _best_split(x: np.ndarray, y: np.ndarray, k: int, features: np.ndarray, min_leaf: int = 1):
    """Lowest weighted-Gini split over ``features``; None if no split helps."""
    n = y.size
    best = (np.inf, -1, 0.0)
    onehot = np.eye(k)[y]
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        valid = np.flatnonzero(xs[1:] > xs[:-1])  # split between positions i and i+1
        valid = valid[(valid + 1 >= min_leaf) & (n - valid - 1 >= min_leaf)]
        if valid.size == 0:
            continue
        left = np.cumsum(onehot[order], axis=0)[valid]
        total = left[-1] + onehot[order][valid[-1] + 1:].sum(axis=0)
        nl = (valid + 1).astype(np.float64)
        nr = n - nl
        right = total - left
        gini_l = 1.0 - np.sum(left ** 2, axis=1) / nl ** 2
        gini_r = 1.0 - np.sum(right ** 2, axis=1) / nr ** 2
        score = (nl * gini_l + nr * gini_r) / n
        j = int(np.argmin(score))
        if score[j] < best[0] - 1e-12:
            best = (float(score[j]), int(f), 0.5 * (xs[valid[j]] + xs[valid[j] + 1]))
    return best


def fit_tree(x: np.ndarray, y: np.ndarray, k: int, rng: np.random.Generator, max_features: int,
             max_depth: int | None = None, min_samples_leaf: int = 1) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(counts):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(counts / counts.sum())
        return len(feature) - 1

    stack = [(np.arange(y.size), 0, new_node(np.bincount(y, minlength=k).astype(np.float64)))]
    while stack:
        idx, depth, node = stack.pop()
        yy = y[idx]
        if idx.size < 2 * min_samples_leaf or np.all(yy == yy[0]) or (max_depth is not None and depth >= max_depth):
            continue
        parent_gini = 1.0 - np.sum(value[node] ** 2)
        feats = rng.choice(x.shape[1], size=max_features, replace=False)
        score, f, thr = _best_split(x[idx], yy, k, feats, min_samples_leaf)
        if f < 0 or score >= parent_gini - 1e-12:
            continue
        go = x[idx, f] <= thr
        li, ri = idx[go], idx[~go]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(np.bincount(y[li], minlength=k).astype(np.float64))
        right[node] = new_node(np.bincount(y[ri], minlength=k).astype(np.float64))
        stack.append((li, depth + 1, left[node]))
        stack.append((ri, depth + 1, right[node]))
    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(value))


@dataclass
class ConstantModel:
    """Predicts a fixed class distribution; used when training data has one class."""
    value: np.ndarray

    def proba(self, x: np.ndarray) -> np.ndarray:
        return np.tile(self.value, (x.shape[0], 1))


@dataclass
class ForestModel:
    trees: list[Tree] = field(default_factory=list)

    def proba(self, x: np.ndarray) -> np.ndarray:
        return np.mean([t.proba(x) for t in self.trees], axis=0)


def fit_forest(x: np.ndarray, y: np.ndarray, k: int, rng: np.random.Generator, n_trees: int = 100,
               max_depth: int | None = None, min_samples_leaf: int = 1) -> ForestModel:
    n, d = x.shape
    m = max(1, int(np.sqrt(d)))
    trees = []
    for _ in range(n_trees):
        boot = rng.integers(0, n, size=n)
        trees.append(fit_tree(x[boot], y[boot], k, rng, m, max_depth, min_samples_leaf))
    return ForestModel(trees)


# -- public interface ---------------------------------------------------------

@dataclass
class Classifier:
    kind: str
    target: str
    schema: TableSchema
    classes: tuple[str, ...]
    model: LogisticModel | ForestModel | ConstantModel

    def predict_proba(self, table: Table) -> np.ndarray:
        if table.schema != self.schema:
            raise ValidationError("table schema differs from the training schema")
        return self.model.proba(feature_matrix(table, self.target))

    def predict(self, table: Table) -> np.ndarray:
        # argmax picks the lowest class index on ties
        return np.argmax(self.predict_proba(table), axis=1)


def fit_classifier(kind: str, train: Table, target: str, seed: int = 0, allow_constant: bool = False,
                   **opts) -> Classifier:
    """Fit a ``logistic`` or ``forest`` classifier for ``target``; deterministic under ``seed``.

    With ``allow_constant`` a single-class training set yields a classifier
    that always predicts that class instead of raising.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown classifier kind {kind!r}; expected one of {KINDS}")
    y, k = _target_codes(train, target)
    if y.size == 0:
        raise ValidationError("training data is empty")
    x = feature_matrix(train, target)
    if np.unique(y).size < 2:
        if not allow_constant:
            raise ValidationError("training data needs at least two target classes")
        model = ConstantModel(np.eye(k)[y[0]])
    elif kind == "logistic":
        model = fit_logistic(x, y, k, **opts)
    else:
        model = fit_forest(x, y, k, np.random.default_rng(seed), **opts)
    return Classifier(kind, target, train.schema, train.schema.column(target).categories, model)
