"""Privacy attacks against released synthetic data or the trained model."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import Table, encode
from ..errors import CapabilityError, ValidationError
from ..gan import GanModel, discriminator_scores, sample
from .classifiers import fit_classifier
from .utility import majority_rate

_CHUNK = 512


@dataclass
class AttackReport:
    attack: str
    success: float
    baseline: float
    n: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.success <= 1.0:
            raise ValidationError(f"success {self.success} outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


# -- re-identification --------------------------------------------------------

def _column_views(real: Table, synth: Table):
    """Per column: (is_categorical, real values, synth values, scale in real-std units)."""
    out = []
    for col in real.schema.columns:
        a, b = real.column_array(col.name), synth.column_array(col.name)
        if col.is_categorical:
            out.append((True, a, b, 1.0))
        else:
            s = float(a.std())
            out.append((False, a, b, s if s > 0 else 1.0))
    return out


def reident_attack(real: Table, synth: Table, overlap: float, tol: float = 0.01,
                   rng: np.random.Generator | None = None) -> AttackReport:
    """Fraction of real records an adversary recovers in full from the synthetic table.

    For each target the adversary knows ceil(overlap * n_cols) of its columns
    (a seeded random subset), picks the synthetic record with the fewest
    mismatches on those columns (continuous columns match within ``tol``
    real-column std units; ties broken by standardized distance, then
    lowest index), and succeeds iff that record matches the target on every
    column.  Known-column subsets are nested across overlaps for a given rng
    seed, so success is comparable between overlap levels.
    """
    if real.schema != synth.schema:
        raise ValidationError("real and synthetic tables use different schemas")
    if not tol > 0:
        raise ValidationError("tolerance must be positive")
    if not 0 < overlap <= 1:
        raise ValidationError("overlap must lie in (0, 1]")
    if real.m == 0 or synth.m == 0:
        raise ValidationError("tables must be non-empty")
    rng = rng if rng is not None else np.random.default_rng(0)
    cols = _column_views(real, synth)
    n_cols = len(cols)
    n_known = math.ceil(overlap * n_cols)
    # one column ordering per target, drawn independently of overlap
    order = np.argsort(rng.uniform(size=(real.m, n_cols)), axis=1)
    known = np.zeros((real.m, n_cols), dtype=bool)
    np.put_along_axis(known, order[:, :n_known], True, axis=1)

    hits = np.zeros(real.m, dtype=bool)
    for lo in range(0, real.m, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, real.m))
        mism = np.zeros((sl.stop - sl.start, synth.m), dtype=np.int64)
        dist = np.zeros(mism.shape)
        full = np.ones(mism.shape, dtype=bool)
        for c, (cat, a, b, s) in enumerate(cols):
            if cat:
                match = a[sl, None] == b[None, :]
                d = (~match).astype(np.float64)
            else:
                d = np.abs(a[sl, None] - b[None, :]) / s
                match = d <= tol
            k = known[sl, c][:, None]
            mism += k & ~match
            dist += np.where(k, d * d, 0.0)
            full &= match
        best = mism.min(axis=1, keepdims=True)
        pick = np.argmin(np.where(mism == best, dist, np.inf), axis=1)
        hits[sl] = full[np.arange(pick.size), pick]
    return AttackReport("reidentification", float(hits.mean()), 0.0, real.m,
                        {"overlap": overlap, "known_columns": n_known, "tolerance": tol})


# -- attribute inference ------------------------------------------------------

def attribute_inference_attack(real: Table, synth: Table, sensitive: str, target: str,
                               kind: str = "logistic", seed: int = 0) -> AttackReport:
    """Confidence-based model inversion of a sensitive column.

    A classifier for ``target`` is trained on the synthetic table.  For each
    real record every candidate sensitive value is substituted in turn and
    the candidate giving the highest probability to the record's true target
    label is predicted (ties go to the lowest category index).
    """
    if real.schema != synth.schema:
        raise ValidationError("real and synthetic tables use different schemas")
    scol = real.schema.column(sensitive)
    if not scol.is_categorical:
        raise ValidationError(f"sensitive column {sensitive!r} must be categorical")
    if not real.schema.column(target).is_categorical or target == sensitive:
        raise ValidationError("target must be a categorical column other than the sensitive one")
    clf = fit_classifier(kind, synth, target, seed, allow_constant=True)
    y = real.column_array(target)
    conf = np.empty((real.m, len(scol.categories)))
    for v in range(len(scol.categories)):
        probe = real.with_column(sensitive, np.full(real.m, v, dtype=np.int64))
        conf[:, v] = clf.predict_proba(probe)[np.arange(real.m), y]
    guess = np.argmax(conf, axis=1)
    truth = real.column_array(sensitive)
    return AttackReport("attribute_inference", float(np.mean(guess == truth)), majority_rate(real, sensitive),
                        real.m, {"sensitive": sensitive, "target": target, "classifier": kind})


# -- membership inference -----------------------------------------------------

def best_threshold_accuracy(member_scores, non_member_scores) -> float:
    """Max over thresholds t of accuracy when predicting "member" for score >= t."""
    pos = np.sort(np.asarray(member_scores, dtype=np.float64))
    neg = np.sort(np.asarray(non_member_scores, dtype=np.float64))
    n = pos.size + neg.size
    thresholds = np.unique(np.concatenate([pos, neg]))
    tp = pos.size - np.searchsorted(pos, thresholds, side="left")
    tn = np.searchsorted(neg, thresholds, side="left")
    acc = (tp + tn) / n
    return float(max(acc.max(initial=0.0), neg.size / n))


def _min_distances(x: np.ndarray, ref: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[0])
    rr = np.sum(ref * ref, axis=1)
    for lo in range(0, x.shape[0], _CHUNK):
        xb = x[lo:lo + _CHUNK]
        d2 = np.sum(xb * xb, axis=1)[:, None] - 2 * xb @ ref.T + rr[None, :]
        out[lo:lo + _CHUNK] = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
    return out


def membership_inference_attack(members: Table, non_members: Table, source: GanModel | Table,
                                setting: str = "FBB", k_samples: int | None = None,
                                rng: np.random.Generator | None = None) -> AttackReport:
    """Best-threshold membership inference on a balanced member/non-member set.

    FBB scores a record by minus its encoded-space distance to the nearest of
    ``k_samples`` generated records (default 10x the member count); ``source``
    may also be a pre-generated synthetic table.  WB scores by the
    discriminator's output and needs a model that still has one.
    """
    if members.m != non_members.m or members.m == 0:
        raise ValidationError("membership inference needs equally sized, non-empty member/non-member sets")
    if members.schema != non_members.schema:
        raise ValidationError("member and non-member tables use different schemas")
    rng = rng if rng is not None else np.random.default_rng(0)
    params = {"setting": setting}
    if setting == "FBB":
        if isinstance(source, GanModel):
            k = k_samples if k_samples is not None else 10 * members.m
            synth, _ = sample(source, k, rng)
        else:
            synth = source
        if synth.schema != members.schema:
            raise ValidationError("synthetic samples use a different schema")
        params["k_samples"] = synth.m
        ref = encode(synth).matrix
        s_in = -_min_distances(encode(members).matrix, ref)
        s_out = -_min_distances(encode(non_members).matrix, ref)
    elif setting == "WB":
        if not isinstance(source, GanModel) or source.discriminator is None:
            raise CapabilityError("white-box membership inference needs the trained discriminator")
        s_in = discriminator_scores(source, members)
        s_out = discriminator_scores(source, non_members)
    else:
        raise ValidationError(f"unknown membership-inference setting {setting!r}; expected FBB or WB")
    return AttackReport("membership_inference", best_threshold_accuracy(s_in, s_out), 0.5,
                        2 * members.m, params)
