import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpcgan.constraints import evaluate_batch
from dpcgan.data import (
    CATEGORICAL,
    CONTINUOUS,
    Column,
    Table,
    TableSchema,
    decode,
    encode,
    encoded_dim,
    load_csv,
    load_schema,
    shipped_schema,
    split,
    write_csv,
)
from dpcgan.errors import GenerationError, RowValidationError, SchemaError, ShapeError, ValidationError
from dpcgan.toy import TOY_SCHEMA, ToySpec, make_toy_dataset

SMALL = TableSchema((
    Column("answer", CATEGORICAL, ("yes", "no")),
    Column("score", CONTINUOUS, low=0.0, high=100.0),
    Column("grade", CATEGORICAL, ("a", "b", "c")),
))


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_three_rows_header_order_insensitive(tmp_path):
    p = write(tmp_path, "d.csv", "score,grade,answer\n1.5,a,yes\n99,c,no\n0,b,yes\n")
    t = load_csv(p, SMALL)
    assert t.m == 3
    assert list(t.rows())[1] == ("no", 99.0, "c")


def test_unknown_category_names_row_and_column(tmp_path):
    p = write(tmp_path, "d.csv", "answer,score,grade\nyes,1,a\nmaybe,2,b\n")
    with pytest.raises(RowValidationError) as exc:
        load_csv(p, SMALL)
    assert exc.value.line == 3 and exc.value.column == "answer"
    assert "line 3" in str(exc.value) and "answer" in str(exc.value)


def test_bad_numeric_out_of_range_and_missing_column(tmp_path):
    with pytest.raises(RowValidationError, match="score"):
        load_csv(write(tmp_path, "a.csv", "answer,score,grade\nyes,abc,a\n"), SMALL)
    with pytest.raises(RowValidationError, match="outside"):
        load_csv(write(tmp_path, "b.csv", "answer,score,grade\nyes,101,a\n"), SMALL)
    with pytest.raises(SchemaError, match="grade"):
        load_csv(write(tmp_path, "c.csv", "answer,score\nyes,1\n"), SMALL)


def test_collect_mode_accounts_for_every_row(tmp_path):
    p = write(tmp_path, "d.csv", "answer,score,grade\nyes,1,a\nmaybe,2,b\nno,3,c\nno,x,c\n")
    t = load_csv(p, SMALL, errors="collect")
    assert t.m + len(t.rejects) == 4
    assert [r[0] for r in t.rejects] == [3, 5]


def test_pima_format_under_shipped_schema(tmp_path):
    schema = shipped_schema("pima")
    assert len(schema.columns) == 9 and schema.target == "Outcome"
    rng = np.random.default_rng(0)
    lines = [",".join(schema.names)]
    for _ in range(768):
        vals = []
        for c in schema.columns:
            if c.is_categorical:
                vals.append(str(rng.choice(c.categories)))
            else:
                vals.append(f"{rng.uniform(c.low, c.high):.3f}")
        lines.append(",".join(vals))
    p = write(tmp_path, "pima.csv", "\n".join(lines) + "\n")
    assert load_csv(p, schema).m == 768


def test_schema_file_parsing(tmp_path):
    doc = {"columns": [{"name": "a", "kind": "categorical", "categories": ["x", "y"]},
                       {"name": "b", "kind": "continuous", "min": 0, "max": 1}],
           "target": "a", "sensitive": ["a"]}
    s = load_schema(write(tmp_path, "s.json", json.dumps(doc)))
    assert s.target == "a" and s.sensitive == ("a",)
    assert TableSchema.from_dict(s.to_dict()) == s
    for bad in (
        {"columns": [{"name": "a", "kind": "categorical", "categories": []}]},
        {"columns": [{"name": "a", "kind": "categorical", "categories": ["x", "x"]}]},
        {"columns": [{"name": "b", "kind": "continuous", "min": 1, "max": 1}]},
        {"columns": [{"name": "a", "kind": "continuous", "min": 0, "max": 1}] * 2},
        {"columns": [{"name": "a", "kind": "text"}]},
    ):
        with pytest.raises(SchemaError):
            TableSchema.from_dict(bad)


def test_encode_examples():
    s = TableSchema((Column("c", CATEGORICAL, ("a", "b", "c")), Column("v", CONTINUOUS, low=0, high=100)))
    enc = encode(("b", 50.0), s)
    np.testing.assert_array_equal(enc.matrix, [[0, 1, 0, 0.0]])
    assert [(g.offset, g.width) for g in enc.segments] == [(0, 3), (3, 1)]
    assert encoded_dim(s) == 4


def test_decode_examples():
    s = TableSchema((Column("c", CATEGORICAL, ("a", "b", "c")), Column("v", CONTINUOUS, low=0, high=10),
                     Column("t", CATEGORICAL, ("p", "q"))))
    rec = list(decode([0.1, 0.7, 0.2, 1.3, 0.5, 0.5], s).rows())[0]
    assert rec == ("b", 10.0, "p")
    with pytest.raises(ShapeError):
        decode(np.zeros(5), s)


def _random_records(rng, schema, n):
    recs = []
    for _ in range(n):
        r = []
        for c in schema.columns:
            r.append(str(rng.choice(c.categories)) if c.is_categorical else float(rng.uniform(c.low, c.high)))
        recs.append(tuple(r))
    return recs


def test_round_trip_thousand_random_records():
    rng = np.random.default_rng(1)
    recs = _random_records(rng, TOY_SCHEMA, 1000)
    t = Table.from_records(TOY_SCHEMA, recs)
    back = list(decode(encode(t).matrix, TOY_SCHEMA).rows())
    for a, b in zip(recs, back):
        for col, x, y in zip(TOY_SCHEMA.columns, a, b):
            if col.is_categorical:
                assert x == y
            else:
                assert abs(x - y) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=encoded_dim(TOY_SCHEMA), max_size=encoded_dim(TOY_SCHEMA)))
def test_decode_is_always_schema_valid(vec):
    t = decode(np.array(vec), TOY_SCHEMA)  # Table() validates domains and ranges
    assert t.m == 1
    evaluate_batch(make_toy_dataset(ToySpec(rows=5))[1], t)


def test_encode_rejects_out_of_range():
    with pytest.raises(ValidationError):
        encode(("yes", 150.0, "a"), SMALL)


def test_split_sizes_determinism_and_partition():
    t = Table.from_records(SMALL, [("yes", float(i), "a") for i in range(10)])
    a, b = split(t, [0.8, 0.2], np.random.default_rng(3))
    assert (a.m, b.m) == (8, 2)
    a2, b2 = split(t, [0.8, 0.2], np.random.default_rng(3))
    assert a.equals(a2) and b.equals(b2)
    vals = sorted(list(a.column_array("score")) + list(b.column_array("score")))
    assert vals == [float(i) for i in range(10)]
    with pytest.raises(ValidationError):
        split(t, [0.99, 0.01], np.random.default_rng(0))
    with pytest.raises(ValidationError):
        split(t, [0.5, 0.4], np.random.default_rng(0))


def test_csv_round_trip(tmp_path):
    t, _ = make_toy_dataset(ToySpec(rows=50), np.random.default_rng(2))
    write_csv(t, tmp_path / "t.csv")
    assert load_csv(tmp_path / "t.csv", TOY_SCHEMA).equals(t)


def test_toy_dataset_obeys_rules_and_is_deterministic():
    t, cs = make_toy_dataset(ToySpec(rows=2000), np.random.default_rng(5))
    assert t.m == 2000
    assert evaluate_batch(cs, t)[1].violations == 0
    t2, _ = make_toy_dataset(ToySpec(rows=2000), np.random.default_rng(5))
    assert t.equals(t2)
    # every rule has something to say about the data's neighbourhood
    assert set(t.labels("diagnosis")) == {"healthy", "prediabetic", "diabetic"}


def test_toy_unsatisfiable_rules():
    rules = {"rules": [{"id": f"no-{d}", "kind": "forbid", "if": [{"col": "diagnosis", "op": "eq", "value": d}]}
                       for d in ("healthy", "prediabetic", "diabetic")]}
    with pytest.raises(GenerationError):
        make_toy_dataset(ToySpec(rows=20, rules=rules, max_rounds=5), np.random.default_rng(0))
    with pytest.raises(ValidationError):
        ToySpec(rules={"rules": []})
