"""Distribution distances between a real and a synthetic table."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import wasserstein_distance

from ..data import Table
from ..errors import ValidationError


def emd_1d(a, b) -> float:
    """Wasserstein-1 distance between two empirical 1-D samples.

    Exact for unequal sample sizes (integral of the CDF gap), which is the
    same quantity as integrating the gap between sorted-sample quantile
    functions.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValidationError("emd_1d needs two non-empty samples")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("emd_1d samples must be finite")
    return float(wasserstein_distance(a, b))


def _summary(v: np.ndarray, scale: float) -> np.ndarray:
    q = np.quantile(v, [0.25, 0.5, 0.75])
    return np.array([v.mean(), v.std(), *q]) / scale


def _scale(a: np.ndarray, b: np.ndarray) -> float:
    # pooled std keeps the distance symmetric; it equals the real std when synth == real
    s = float(np.concatenate([a, b]).std())
    return s if s > 0 else 1.0


@dataclass
class FidelityReport:
    emd: dict[str, float]             # continuous columns, std-standardized
    summary_l2: dict[str, float]      # continuous columns
    frequency_l1: dict[str, float]    # categorical columns
    aggregate_emd: float
    categorical_distance: float
    continuous_distance: float
    distance: float

    def to_dict(self) -> dict:
        return asdict(self)


def _mean(vals) -> float:
    vals = list(vals)
    return float(np.mean(vals)) if vals else 0.0


def mixed_distance(real: Table, synth: Table) -> FidelityReport:
    """Per-column and aggregate distances between ``real`` and ``synth``.

    Categorical: L1 between normalized frequency vectors (max 2).
    Continuous: L2 between (mean, std, quartiles) vectors and EMD, both on
    values divided by the pooled column std.
    """
    if real.schema != synth.schema:
        raise ValidationError("real and synthetic tables use different schemas")
    if real.m == 0 or synth.m == 0:
        raise ValidationError("tables must be non-empty")
    emd, l2, l1 = {}, {}, {}
    for col in real.schema.columns:
        a, b = real.column_array(col.name), synth.column_array(col.name)
        if col.is_categorical:
            k = len(col.categories)
            fa = np.bincount(a, minlength=k) / a.size
            fb = np.bincount(b, minlength=k) / b.size
            l1[col.name] = float(np.abs(fa - fb).sum())
        else:
            s = _scale(a, b)
            emd[col.name] = emd_1d(a / s, b / s)
            l2[col.name] = float(np.linalg.norm(_summary(a, s) - _summary(b, s)))
    cat, cont = _mean(l1.values()), _mean(l2.values())
    kinds = [v for v, present in ((cat, l1), (cont, l2)) if present]
    return FidelityReport(emd, l2, l1, _mean(emd.values()), cat, cont, _mean(kinds))
