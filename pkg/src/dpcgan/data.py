"""Tabular schemas, validated tables, CSV ingestion and network-space encoding."""

from __future__ import annotations

import contextlib
import contextvars
import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import RowValidationError, SchemaError, ShapeError, ValidationError

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if not self.name:
            raise SchemaError("column name must be non-empty")
        if self.kind == CATEGORICAL:
            if not self.categories:
                raise SchemaError(f"categorical column {self.name!r} has an empty domain")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"categorical column {self.name!r} has duplicate categories")
        elif self.kind == CONTINUOUS:
            if not (math.isfinite(self.low) and math.isfinite(self.high) and self.low < self.high):
                raise SchemaError(f"continuous column {self.name!r} needs finite min < max")
        else:
            raise SchemaError(f"column {self.name!r} has unknown kind {self.kind!r}")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    @property
    def width(self) -> int:
        return len(self.categories) if self.is_categorical else 1

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.is_categorical:
            d["categories"] = list(self.categories)
        else:
            d["min"], d["max"] = self.low, self.high
        return d


@dataclass(frozen=True)
class TableSchema:
    columns: tuple[Column, ...]
    target: str | None = None
    sensitive: tuple[str, ...] = ()

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if not names:
            raise SchemaError("schema has no columns")
        dup = [n for n, k in Counter(names).items() if k > 1]
        if dup:
            raise SchemaError(f"duplicate column names: {dup}")
        for ref in ([self.target] if self.target else []) + list(self.sensitive):
            if ref not in names:
                raise SchemaError(f"schema references unknown column {ref!r}")
        if self.target and not self.column(self.target).is_categorical:
            raise SchemaError("target column must be categorical")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown column {name!r}") from None

    def column(self, name: str) -> Column:
        return self.columns[self.index(name)]

    def has(self, name: str) -> bool:
        return name in self.names

    def to_dict(self) -> dict:
        d = {"columns": [c.to_dict() for c in self.columns]}
        if self.target:
            d["target"] = self.target
        d["sensitive"] = list(self.sensitive)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TableSchema":
        if not isinstance(d, dict) or "columns" not in d:
            raise SchemaError("schema must be an object with a 'columns' list")
        cols = []
        for raw in d["columns"]:
            try:
                name, kind = raw["name"], raw["kind"]
            except (KeyError, TypeError):
                raise SchemaError(f"column entry needs 'name' and 'kind': {raw!r}") from None
            if kind == CATEGORICAL:
                cats = raw.get("categories")
                if not isinstance(cats, list):
                    raise SchemaError(f"categorical column {name!r} needs a 'categories' list")
                cols.append(Column(name, kind, tuple(str(c) for c in cats)))
            elif kind == CONTINUOUS:
                if "min" not in raw or "max" not in raw:
                    raise SchemaError(f"continuous column {name!r} needs 'min' and 'max'")
                cols.append(Column(name, kind, low=float(raw["min"]), high=float(raw["max"])))
            else:
                raise SchemaError(f"column {name!r} has unknown kind {kind!r}")
        return cls(tuple(cols), d.get("target"), tuple(d.get("sensitive", ())))


def load_schema(path: str | Path) -> TableSchema:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    return TableSchema.from_dict(raw)


def save_schema(schema: TableSchema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n")


# -- access audit -----------------------------------------------------------

_phase: contextvars.ContextVar[str] = contextvars.ContextVar("table_access_phase", default="other")


@contextlib.contextmanager
def access_phase(name: str) -> Iterator[None]:
    """Label table reads made inside the block (see Table.access_counts)."""
    token = _phase.set(name)
    try:
        yield
    finally:
        _phase.reset(token)


@dataclass(frozen=True)
class Table:
    """Immutable validated table.

    Categorical columns are stored as integer codes into the column's
    category tuple, continuous columns as float64.  Reads of row data go
    through ``column_array``, ``arrays`` or ``rows`` and are tallied per
    access phase.
    """

    schema: TableSchema
    _data: tuple[np.ndarray, ...]
    rejects: tuple[tuple[int, str, str], ...] = ()
    access_counts: Counter = field(default_factory=Counter, compare=False, repr=False)

    def __post_init__(self):
        if len(self._data) != len(self.schema.columns):
            raise ShapeError("column count does not match schema")
        lengths = {len(a) for a in self._data}
        if len(lengths) > 1:
            raise ShapeError("columns have different lengths")
        for col, arr in zip(self.schema.columns, self._data):
            arr.setflags(write=False)
            if col.is_categorical:
                if arr.size and (arr.min() < 0 or arr.max() >= len(col.categories)):
                    raise ValidationError(f"column {col.name!r} has codes outside its domain")
            elif arr.size and (not np.all(np.isfinite(arr)) or arr.min() < col.low or arr.max() > col.high):
                raise ValidationError(f"column {col.name!r} has values outside [{col.low}, {col.high}]")

    def _touch(self) -> None:
        self.access_counts[_phase.get()] += 1

    @property
    def m(self) -> int:
        return len(self._data[0])

    def __len__(self) -> int:
        return self.m

    def column_array(self, name: str) -> np.ndarray:
        """Codes (categorical) or values (continuous) of one column."""
        self._touch()
        return self._data[self.schema.index(name)]

    def arrays(self) -> tuple[np.ndarray, ...]:
        self._touch()
        return self._data

    def labels(self, name: str) -> list[str]:
        col = self.schema.column(name)
        if not col.is_categorical:
            raise ValidationError(f"column {name!r} is not categorical")
        return [col.categories[c] for c in self.column_array(name)]

    def rows(self) -> Iterator[tuple]:
        """Records as tuples in schema order (category strings, floats)."""
        self._touch()
        cols = []
        for col, arr in zip(self.schema.columns, self._data):
            if col.is_categorical:
                cols.append([col.categories[c] for c in arr])
            else:
                cols.append([float(v) for v in arr])
        return iter(zip(*cols))

    def take(self, idx: Sequence[int] | np.ndarray) -> "Table":
        self._touch()
        idx = np.asarray(idx, dtype=np.int64)
        return Table(self.schema, tuple(a[idx].copy() for a in self._data))

    def with_column(self, name: str, arr: np.ndarray) -> "Table":
        data = list(self._data)
        data[self.schema.index(name)] = np.asarray(arr).copy()
        return Table(self.schema, tuple(data))

    @classmethod
    def from_arrays(cls, schema: TableSchema, arrays: Sequence[np.ndarray]) -> "Table":
        data = []
        for col, arr in zip(schema.columns, arrays):
            dtype = np.int64 if col.is_categorical else np.float64
            data.append(np.array(arr, dtype=dtype))
        return cls(schema, tuple(data))

    @classmethod
    def from_records(cls, schema: TableSchema, records: Iterable[Sequence]) -> "Table":
        records = list(records)
        cols: list[list] = [[] for _ in schema.columns]
        for r, rec in enumerate(records):
            if len(rec) != len(schema.columns):
                raise ShapeError(f"record {r} has {len(rec)} fields, schema has {len(schema.columns)}")
            for j, (col, v) in enumerate(zip(schema.columns, rec)):
                cols[j].append(_parse_value(col, v, line=None))
        arrays = [
            np.array(c, dtype=np.int64 if col.is_categorical else np.float64).reshape(-1)
            for col, c in zip(schema.columns, cols)
        ]
        return cls(schema, tuple(arrays))

    def equals(self, other: "Table") -> bool:
        return self.schema == other.schema and all(
            np.array_equal(a, b) for a, b in zip(self._data, other._data)
        )


def _parse_value(col: Column, raw, line: int | None):
    if col.is_categorical:
        s = str(raw).strip() if not isinstance(raw, str) else raw.strip()
        if isinstance(raw, (int, np.integer)) and not isinstance(raw, bool) and s not in col.categories:
            s = str(int(raw))
        try:
            return col.categories.index(s)
        except ValueError:
            where = f"line {line}, " if line is not None else ""
            raise RowValidationError(
                f"{where}column {col.name!r}: category {s!r} not in domain {list(col.categories)}",
                line=line, column=col.name,
            ) from None
    try:
        v = float(raw)
    except (TypeError, ValueError):
        where = f"line {line}, " if line is not None else ""
        raise RowValidationError(f"{where}column {col.name!r}: cannot parse {raw!r} as a number",
                                 line=line, column=col.name) from None
    if not math.isfinite(v) or v < col.low or v > col.high:
        where = f"line {line}, " if line is not None else ""
        raise RowValidationError(
            f"{where}column {col.name!r}: value {v} outside [{col.low}, {col.high}]",
            line=line, column=col.name,
        )
    return v


def load_csv(path: str | Path, schema: TableSchema, errors: str = "raise") -> Table:
    """Read an RFC-4180 CSV with a header row.

    ``errors="raise"`` stops at the first bad row; ``errors="collect"``
    keeps good rows and lists the bad ones in ``Table.rejects`` as
    (line, column, message).
    """
    if errors not in ("raise", "collect"):
        raise ValidationError("errors must be 'raise' or 'collect'")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        extra = [h for h in header if h not in schema.names]
        if extra:
            raise SchemaError(f"{path}: unexpected column(s) {extra}")
        pos = [header.index(n) for n in schema.names]
        cols: list[list] = [[] for _ in schema.columns]
        rejects = []
        for line, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            try:
                if len(row) != len(header):
                    raise RowValidationError(
                        f"line {line}: expected {len(header)} fields, got {len(row)}", line=line)
                parsed = [_parse_value(col, row[p], line) for col, p in zip(schema.columns, pos)]
            except RowValidationError as exc:
                if errors == "raise":
                    raise
                rejects.append((line, exc.column or "", str(exc)))
                continue
            for j, v in enumerate(parsed):
                cols[j].append(v)
    arrays = [np.array(c, dtype=np.int64 if col.is_categorical else np.float64)
              for col, c in zip(schema.columns, cols)]
    return Table(schema, tuple(arrays), tuple(rejects))


def write_csv(table: Table, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.schema.names)
        for rec in table.rows():
            w.writerow([v if isinstance(v, str) else repr(v) for v in rec])


# -- encoding ---------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    column: str
    offset: int
    width: int
    categorical: bool


def segment_map(schema: TableSchema) -> tuple[Segment, ...]:
    segs, off = [], 0
    for col in schema.columns:
        segs.append(Segment(col.name, off, col.width, col.is_categorical))
        off += col.width
    return tuple(segs)


def encoded_dim(schema: TableSchema) -> int:
    return sum(c.width for c in schema.columns)


@dataclass(frozen=True)
class EncodedBatch:
    matrix: np.ndarray
    segments: tuple[Segment, ...]


def encode(obj: Table | Sequence, schema: TableSchema | None = None) -> EncodedBatch:
    """One-hot for categorical columns, 2(v-min)/(max-min)-1 for continuous ones."""
    if isinstance(obj, Table):
        table = obj
    else:
        if schema is None:
            raise ValidationError("encoding a bare record needs a schema")
        table = Table.from_records(schema, [obj])
    schema = table.schema
    arrays = table.arrays()
    out = np.zeros((table.m, encoded_dim(schema)))
    for col, seg, arr in zip(schema.columns, segment_map(schema), arrays):
        if col.is_categorical:
            out[np.arange(table.m), seg.offset + arr] = 1.0
        else:
            if arr.size and (arr.min() < col.low or arr.max() > col.high):
                raise ValidationError(f"column {col.name!r} out of range")
            out[:, seg.offset] = 2.0 * (arr - col.low) / (col.high - col.low) - 1.0
    return EncodedBatch(out, segment_map(schema))


def decode(matrix, schema: TableSchema) -> Table:
    """Argmax (lowest index on ties) per categorical segment; inverse scale + clamp otherwise."""
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    d = encoded_dim(schema)
    if x.ndim != 2 or x.shape[1] != d:
        raise ShapeError(f"encoded width {x.shape[-1]} does not match schema width {d}")
    arrays = []
    for col, seg in zip(schema.columns, segment_map(schema)):
        block = x[:, seg.offset:seg.offset + seg.width]
        if col.is_categorical:
            arrays.append(np.argmax(block, axis=1).astype(np.int64))
        else:
            v = col.low + (block[:, 0] + 1.0) / 2.0 * (col.high - col.low)
            arrays.append(np.clip(np.nan_to_num(v, nan=col.low), col.low, col.high))
    return Table(schema, tuple(arrays))


def split(table: Table, fractions: Sequence[float], rng: np.random.Generator) -> tuple[Table, ...]:
    """Random disjoint partition; sizes are round(f*m) with the last part taking the remainder."""
    fr = [float(f) for f in fractions]
    if len(fr) < 2 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise ValidationError("fractions must be non-negative and sum to 1")
    if table.m == 0:
        raise ValidationError("cannot split an empty table")
    sizes = [int(round(f * table.m)) for f in fr[:-1]]
    sizes.append(table.m - sum(sizes))
    if any(s <= 0 for s in sizes):
        raise ValidationError(f"split sizes {sizes} leave an empty part")
    perm = rng.permutation(table.m)
    parts, start = [], 0
    for s in sizes:
        parts.append(table.take(np.sort(perm[start:start + s])))
        start += s
    return tuple(parts)


def concat(tables: Sequence[Table]) -> Table:
    schema = tables[0].schema
    if any(t.schema != schema for t in tables):
        raise ValidationError("cannot concatenate tables with different schemas")
    cols = zip(*(t.arrays() for t in tables))
    return Table(schema, tuple(np.concatenate(c) for c in cols))


def shipped_schema(name: str) -> TableSchema:
    """Schema files bundled with the package (e.g. ``"pima"``)."""
    from importlib.resources import files

    res = files("dpcgan").joinpath(f"schemas/{name}.json")
    if not res.is_file():
        raise SchemaError(f"no bundled schema named {name!r}")
    return TableSchema.from_dict(json.loads(res.read_text()))
