"""Rule-based constraint matrix.

A ConstraintSet maps every schema-valid record to 1 (valid) or 0 (invalid).
Rules are conjunctions of column conditions:

* ``forbid``  - record invalid iff the antecedent holds;
* ``require`` - record invalid iff the antecedent holds and the consequent does not.

CM(x) is the conjunction of all rule validities, so the empty set is
identically 1.
"""

from __future__ import annotations

import itertools
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Table, TableSchema
from .errors import RuleParseError, ValidationError

CATEGORICAL_OPS = ("eq", "in")
CONTINUOUS_OPS = ("lt", "gt", "between")


@dataclass(frozen=True)
class Condition:
    column: str
    op: str
    value: object

    def mask(self, table: Table) -> np.ndarray:
        col = table.schema.column(self.column)
        arr = table.column_array(self.column)
        if self.op == "eq":
            return arr == col.categories.index(self.value)
        if self.op == "in":
            return np.isin(arr, [col.categories.index(v) for v in self.value])
        if self.op == "lt":
            return arr < self.value
        if self.op == "gt":
            return arr > self.value
        lo, hi = self.value
        return (arr > lo) & (arr < hi)

    def holds(self, value) -> bool:
        """Scalar semantics on one decoded value (used by the tabulation path)."""
        if self.op == "eq":
            return value == self.value
        if self.op == "in":
            return value in self.value
        if self.op == "lt":
            return value < self.value
        if self.op == "gt":
            return value > self.value
        lo, hi = self.value
        return lo < value < hi

    def to_dict(self) -> dict:
        v = list(self.value) if isinstance(self.value, tuple) else self.value
        return {"col": self.column, "op": self.op, "value": v}


@dataclass(frozen=True)
class Rule:
    id: str
    kind: str
    antecedent: tuple[Condition, ...]
    consequent: tuple[Condition, ...] = ()
    description: str = ""

    def violated_mask(self, table: Table) -> np.ndarray:
        a = np.ones(table.m, dtype=bool)
        for c in self.antecedent:
            a &= c.mask(table)
        if self.kind == "forbid":
            return a
        b = np.ones(table.m, dtype=bool)
        for c in self.consequent:
            b &= c.mask(table)
        return a & ~b

    def violated_by(self, record: dict) -> bool:
        a = all(c.holds(record[c.column]) for c in self.antecedent)
        if self.kind == "forbid":
            return a
        return a and not all(c.holds(record[c.column]) for c in self.consequent)

    def to_dict(self) -> dict:
        d = {"id": self.id, "kind": self.kind, "if": [c.to_dict() for c in self.antecedent]}
        if self.kind == "require":
            d["then"] = [c.to_dict() for c in self.consequent]
        d["description"] = self.description
        return d


@dataclass(frozen=True)
class ViolationReport:
    n: int
    violations: int
    per_rule: dict = field(default_factory=dict)

    @property
    def rate(self) -> float:
        return self.violations / self.n if self.n else 0.0

    def to_dict(self) -> dict:
        return {"rows": self.n, "violations": self.violations, "violation_rate": self.rate,
                "per_rule": dict(self.per_rule)}


@dataclass(frozen=True)
class ConstraintSet:
    rules: tuple[Rule, ...]
    schema: TableSchema

    def __len__(self) -> int:
        return len(self.rules)

    def to_dict(self) -> dict:
        return {"rules": [r.to_dict() for r in self.rules]}

    def with_rules(self, rules: Sequence[Rule]) -> "ConstraintSet":
        return ConstraintSet(tuple(rules), self.schema)


def _check_condition(raw, schema: TableSchema, rule_id: str) -> Condition:
    if not isinstance(raw, dict) or not {"col", "op"} <= raw.keys():
        raise RuleParseError(f"rule {rule_id!r}: condition needs 'col', 'op', 'value': {raw!r}", rule_id)
    name, op, value = raw["col"], raw["op"], raw.get("value")
    if not schema.has(name):
        raise RuleParseError(f"rule {rule_id!r}: unknown column {name!r}", rule_id)
    col = schema.column(name)
    if col.is_categorical:
        if op not in CATEGORICAL_OPS:
            raise RuleParseError(
                f"rule {rule_id!r}: op {op!r} not valid for categorical column {name!r}", rule_id)
        vals = [value] if op == "eq" else value
        if not isinstance(vals, (list, tuple)) or not vals:
            raise RuleParseError(f"rule {rule_id!r}: 'in' needs a non-empty list", rule_id)
        vals = [str(v) for v in vals]
        bad = [v for v in vals if v not in col.categories]
        if bad:
            raise RuleParseError(f"rule {rule_id!r}: {bad} not in domain of {name!r}", rule_id)
        return Condition(name, op, vals[0] if op == "eq" else tuple(vals))
    if op not in CONTINUOUS_OPS:
        raise RuleParseError(f"rule {rule_id!r}: op {op!r} not valid for continuous column {name!r}", rule_id)
    try:
        if op == "between":
            lo, hi = (float(v) for v in value)
            if not lo < hi:
                raise ValueError
            return Condition(name, op, (lo, hi))
        return Condition(name, op, float(value))
    except (TypeError, ValueError):
        raise RuleParseError(f"rule {rule_id!r}: bad numeric value {value!r} for {op!r}", rule_id) from None


def rules_from_dict(doc: dict, schema: TableSchema) -> ConstraintSet:
    if not isinstance(doc, dict) or not isinstance(doc.get("rules", []), list):
        raise RuleParseError("rule file must be an object with a 'rules' list")
    rules, seen = [], set()
    for k, raw in enumerate(doc.get("rules", [])):
        rid = str(raw.get("id", "")) if isinstance(raw, dict) else ""
        if not rid:
            raise RuleParseError(f"rule #{k} has no id")
        if rid in seen:
            raise RuleParseError(f"duplicate rule id {rid!r}", rid)
        seen.add(rid)
        kind = raw.get("kind")
        if kind not in ("forbid", "require"):
            raise RuleParseError(f"rule {rid!r}: kind must be 'forbid' or 'require'", rid)
        ante = tuple(_check_condition(c, schema, rid) for c in raw.get("if", []))
        then = raw.get("then")
        if kind == "require":
            if not then:
                raise RuleParseError(f"rule {rid!r}: require needs a non-empty 'then'", rid)
            cons = tuple(_check_condition(c, schema, rid) for c in then)
        else:
            if then:
                raise RuleParseError(f"rule {rid!r}: forbid rules take no 'then'", rid)
            cons = ()
        rules.append(Rule(rid, kind, ante, cons, str(raw.get("description", ""))))
    return ConstraintSet(tuple(rules), schema)


def parse_rules(path: str | Path, schema: TableSchema) -> ConstraintSet:
    text = Path(path).read_text()
    if not text.strip():
        return ConstraintSet((), schema)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RuleParseError(f"{path}: invalid JSON ({exc})") from None
    return rules_from_dict(doc, schema)


def save_rules(cs: ConstraintSet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cs.to_dict(), indent=2) + "\n")


def _as_table(cs: ConstraintSet, obj) -> Table:
    if isinstance(obj, Table):
        if obj.schema != cs.schema:
            raise ValidationError("table schema does not match the constraint set's schema")
        return obj
    if isinstance(obj, dict):
        obj = [obj.get(n) for n in cs.schema.names]
    return Table.from_records(cs.schema, [obj])


def evaluate_batch(cs: ConstraintSet, table: Table) -> tuple[np.ndarray, ViolationReport]:
    """Validity vector in {0,1}^m plus per-rule violation counts."""
    table = _as_table(cs, table)
    valid = np.ones(table.m, dtype=bool)
    per_rule = {}
    for rule in cs.rules:
        hit = rule.violated_mask(table)
        per_rule[rule.id] = int(hit.sum())
        valid &= ~hit
    report = ViolationReport(table.m, int(table.m - valid.sum()), per_rule)
    return valid.astype(np.int64), report


def evaluate(cs: ConstraintSet, record) -> int:
    """CM(record) for one record (tuple in schema order, dict, or 1-row Table)."""
    table = _as_table(cs, record)
    if table.m != 1:
        raise ValidationError("evaluate expects exactly one record")
    return int(evaluate_batch(cs, table)[0][0])


def satisfaction(cs: ConstraintSet, table: Table) -> np.ndarray:
    """Fraction of rules each record satisfies; for logging only."""
    table = _as_table(cs, table)
    if not cs.rules:
        return np.ones(table.m)
    ok = sum((~r.violated_mask(table)).astype(float) for r in cs.rules)
    return ok / len(cs.rules)


def tabulate(cs: ConstraintSet) -> np.ndarray:
    """Explicit CM array over the full cross-product of an all-categorical schema.

    Cells are filled record by record with scalar rule semantics, a path
    independent of the vectorized masks used by ``evaluate_batch``.
    """
    cols = cs.schema.columns
    if not all(c.is_categorical for c in cols):
        raise ValidationError("tabulation needs an all-categorical schema")
    shape = tuple(len(c.categories) for c in cols)
    if int(np.prod(shape)) > 1_000_000:
        raise ValidationError(f"cross-product of size {int(np.prod(shape))} is too large to tabulate")
    out = np.ones(shape, dtype=np.int64)
    for idx in itertools.product(*(range(s) for s in shape)):
        rec = {c.name: c.categories[i] for c, i in zip(cols, idx)}
        if any(r.violated_by(rec) for r in cs.rules):
            out[idx] = 0
    return out


def violation_counts(cs: ConstraintSet, table: Table) -> Counter:
    return Counter(evaluate_batch(cs, table)[1].per_rule)
