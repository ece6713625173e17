"""Rule-governed toy patient table for tests and desk-scale experiments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSet, evaluate_batch, rules_from_dict
from .data import CATEGORICAL, CONTINUOUS, Column, Table, TableSchema
from .dpsgd import PrivacySpec
from .errors import GenerationError, ValidationError

TOY_SCHEMA = TableSchema(
    columns=(
        Column("age", CONTINUOUS, low=0.0, high=90.0),
        Column("glucose", CONTINUOUS, low=50.0, high=250.0),
        Column("diagnosis", CATEGORICAL, ("healthy", "prediabetic", "diabetic")),
        Column("drug", CATEGORICAL, ("none", "metformin", "insulin", "warfarin")),
        Column("smoker", CATEGORICAL, ("no", "yes")),
        Column("outcome", CATEGORICAL, ("negative", "positive")),
    ),
    target="outcome",
    sensitive=("smoker",),
)

def _forbid(rid, desc, *conds):
    return {"id": rid, "kind": "forbid", "description": desc,
            "if": [{"col": c, "op": op, "value": v} for c, op, v in conds]}


# Diagnosis follows fasting-glucose cut-offs (100 / 126 mg/dL); drugs follow diagnosis and age.
TOY_RULES = {
    "rules": [
        _forbid("no-warfarin-minors", "warfarin is not prescribed under 18",
                ("age", "lt", 18), ("drug", "eq", "warfarin")),
        _forbid("healthy-glucose", "glucose in the diabetic range contradicts a healthy label",
                ("diagnosis", "eq", "healthy"), ("glucose", "gt", 126)),
        _forbid("diabetic-glucose", "glucose in the normal range contradicts a diabetic label",
                ("diagnosis", "eq", "diabetic"), ("glucose", "lt", 100)),
        {"id": "diabetic-treated", "kind": "require",
         "if": [{"col": "diagnosis", "op": "eq", "value": "diabetic"}],
         "then": [{"col": "drug", "op": "in", "value": ["metformin", "insulin"]}],
         "description": "diabetic patients receive a glucose-lowering drug"},
        _forbid("healthy-no-antidiabetics", "no glucose-lowering drugs without a diagnosis",
                ("diagnosis", "eq", "healthy"), ("drug", "in", ["metformin", "insulin"])),
        _forbid("prediabetic-no-insulin", "insulin is reserved for diabetes",
                ("diagnosis", "eq", "prediabetic"), ("drug", "eq", "insulin")),
    ]
}


@dataclass(frozen=True)
class ToySpec:
    rows: int = 2000
    rules: dict = field(default_factory=lambda: TOY_RULES)
    label_noise: float = 0.1
    max_rounds: int = 100

    def __post_init__(self):
        if self.rows <= 0:
            raise ValidationError("rows must be positive")
        if not 0 <= self.label_noise < 0.5:
            raise ValidationError("label_noise must be in [0, 0.5)")
        n_cat = sum(c.is_categorical for c in TOY_SCHEMA.columns)
        n_cont = len(TOY_SCHEMA.columns) - n_cat
        if n_cat < 2 or n_cont < 2 or not self.rules.get("rules"):
            raise ValidationError("toy spec needs >=2 categorical, >=2 continuous columns and >=1 rule")


_DRUG_P = {  # none, metformin, insulin, warfarin
    0: (0.88, 0.0, 0.0, 0.12),
    1: (0.55, 0.35, 0.0, 0.10),
    2: (0.0, 0.55, 0.35, 0.10),
}


def _draw(n: int, rng: np.random.Generator, label_noise: float) -> list[np.ndarray]:
    minor = rng.uniform(size=n) < 0.2
    age = np.where(minor, rng.uniform(2, 18, n), np.clip(rng.normal(50, 16, n), 18, 90))
    glucose = np.clip(rng.normal(112 + 0.3 * (age - 40), 28, n), 50, 250)
    diag = np.digitize(glucose, [100.0, 126.0])
    drug = np.array([rng.choice(4, p=_DRUG_P[d]) for d in diag])
    drug[(drug == 3) & (age < 18)] = 0
    smoker = rng.integers(0, 2, size=n)
    score = 0.05 * (glucose - 120) + 0.04 * (age - 45) + 0.7 * (diag == 2) - 0.8 * (drug == 2)
    outcome = (score > 0).astype(np.int64)
    flip = rng.uniform(size=n) < label_noise
    outcome[flip] = 1 - outcome[flip]
    return [age, glucose, diag, drug, smoker, outcome]


def make_toy_dataset(spec: ToySpec | None = None, rng: np.random.Generator | None = None) -> tuple[Table, ConstraintSet]:
    """Sample a toy table whose every row satisfies the emitted rules.

    Rows are drawn from a fixed generative story; any row breaking a rule
    is redrawn.  If violations persist after ``max_rounds`` the rule set is
    treated as unsatisfiable for this story.
    """
    spec = spec or ToySpec()
    rng = rng if rng is not None else np.random.default_rng(0)
    cs = rules_from_dict(spec.rules, TOY_SCHEMA)
    cols = _draw(spec.rows, rng, spec.label_noise)
    for _ in range(spec.max_rounds):
        table = Table.from_arrays(TOY_SCHEMA, cols)
        valid, _ = evaluate_batch(cs, table)
        bad = np.flatnonzero(valid == 0)
        if bad.size == 0:
            return table, cs
        fresh = _draw(bad.size, rng, spec.label_noise)
        for c, f in zip(cols, fresh):
            c[bad] = f
    raise GenerationError(f"could not satisfy the rule set after {spec.max_rounds} rounds "
                          f"({bad.size} rows still invalid)")


def toy_train_config(**overrides):
    """Desk-scale training preset for the toy table (m=2000).

    Smaller nets than the library defaults and C=5: at C=1 every toy
    per-example gradient is clipped, which erases the constraint weight.
    The budget is not enforced; pass ``privacy=`` to change that.
    """
    from .gan import TrainConfig

    base = dict(hidden_g=(64, 64), hidden_d=(64, 64), noise_dim=32, batch_size=256, lr_d=0.05,
                steps=2000, log_every=0,
                privacy=PrivacySpec(target_epsilon=1e3, clip=5.0, noise_multiplier=1.0),
                enforce_budget=False)
    base.update(overrides)
    return TrainConfig(**base)
