"""Train-on-synthetic / test-on-real utility."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from ..data import Table
from ..errors import ValidationError
from .classifiers import fit_classifier


def classification_metrics(y_true: np.ndarray, y_pred: np.ndarray, k: int) -> dict[str, float]:
    """Accuracy plus precision/recall/F1 (positive class 1 when binary, macro average otherwise)."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    classes = [1] if k == 2 else list(range(k))
    prec, rec, f1 = [], [], []
    for c in classes:
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        prec.append(p)
        rec.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
    return {"accuracy": float(np.mean(y_true == y_pred)), "precision": float(np.mean(prec)),
            "recall": float(np.mean(rec)), "f1": float(np.mean(f1))}


@dataclass
class UtilityRow:
    kind: str
    baseline: dict[str, float]
    tstr: dict[str, float]
    gap: dict[str, float]  # baseline - tstr

    def to_dict(self) -> dict:
        return asdict(self)


def tstr(real_train: Table, real_test: Table, synth: Table, target: str,
         kinds=("logistic", "forest"), seed: int = 0) -> list[UtilityRow]:
    """Fit each classifier kind on real_train (baseline) and on synth, score both on real_test.

    A synthetic table with a single target class gives a constant predictor,
    so a collapsed generator scores poorly rather than raising.
    """
    if not (real_train.schema == real_test.schema == synth.schema):
        raise ValidationError("real and synthetic tables use different schemas")
    if synth.m < real_train.m:
        warnings.warn(f"synthetic table has {synth.m} rows, fewer than the {real_train.m} real training rows",
                      stacklevel=2)
    k = len(real_test.schema.column(target).categories)
    y = real_test.column_array(target)
    rows = []
    for kind in kinds:
        base = classification_metrics(y, fit_classifier(kind, real_train, target, seed).predict(real_test), k)
        syn = classification_metrics(y, fit_classifier(kind, synth, target, seed, allow_constant=True).predict(real_test), k)
        rows.append(UtilityRow(kind, base, syn, {m: base[m] - syn[m] for m in base}))
    return rows


def majority_rate(table: Table, column: str) -> float:
    col = table.schema.column(column)
    counts = np.bincount(table.column_array(column), minlength=len(col.categories))
    return float(counts.max() / counts.sum())
