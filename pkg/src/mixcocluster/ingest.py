"""Reading mixed numeric/categorical tables into an observation store.

A dataset is a log of ``(instance, variable, value)`` observations. A cell of
a wide table may hold no observation (missing token), one value, or several
values written as ``{v1, v2}``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
DEFAULT_MISSING = "."
DEFAULT_ID_COLUMN = "#id"


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"variable {self.name!r}: unknown kind {self.kind!r}")

    @property
    def is_numeric(self) -> bool:
        return self.kind == NUMERIC


@dataclass(frozen=True)
class Schema:
    variables: tuple[Variable, ...]

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        if not self.variables:
            raise SchemaError("schema has no variables")
        names = [v.name for v in self.variables]
        seen = set()
        for name in names:
            if name in seen:
                raise SchemaError(f"duplicate variable name {name!r}")
            seen.add(name)

    def __len__(self) -> int:
        return len(self.variables)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    @property
    def n_numeric(self) -> int:
        return sum(v.is_numeric for v in self.variables)

    @property
    def n_categorical(self) -> int:
        return len(self.variables) - self.n_numeric

    def index(self, name: str) -> int:
        for k, v in enumerate(self.variables):
            if v.name == name:
                return k
        raise SchemaError(f"unknown variable {name!r}")

    def to_json(self) -> list[dict]:
        return [{"name": v.name, "kind": v.kind} for v in self.variables]

    @classmethod
    def from_json(cls, items: Iterable[dict]) -> "Schema":
        try:
            return cls(tuple(Variable(str(d["name"]), str(d["kind"])) for d in items))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema entry: {exc}") from exc


def load_schema(path: str | Path) -> Schema:
    with open(path) as f:
        return Schema.from_json(json.load(f))


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable observation store.

    Observations are held column-wise: ``obs_instance[t]`` and
    ``obs_variable[t]`` index the instance and variable of observation ``t``.
    Numeric values live in ``obs_number``; categorical values are coded in
    ``obs_code`` as indices into ``tokens[k]`` (sorted token list of variable
    ``k``). The unused slot holds 0.0 / -1.
    """

    schema: Schema
    instances: tuple[str, ...]
    obs_instance: np.ndarray
    obs_variable: np.ndarray
    obs_number: np.ndarray
    obs_code: np.ndarray
    tokens: tuple[tuple[str, ...], ...]
    warnings: tuple[str, ...] = field(default=())

    @property
    def n_instances(self) -> int:
        return len(self.instances)

    @property
    def n_observations(self) -> int:
        return int(self.obs_instance.shape[0])

    def n_values(self, k: int) -> int:
        """V_k: number of distinct tokens observed for categorical variable k."""
        return len(self.tokens[k])

    def variable_counts(self) -> np.ndarray:
        return np.bincount(self.obs_variable, minlength=len(self.schema)).astype(np.int64)

    def modeled_variables(self) -> list[int]:
        """Variables carrying at least one observation."""
        counts = self.variable_counts()
        return [k for k in range(len(self.schema)) if counts[k] > 0]

    def numeric_values(self, k: int) -> np.ndarray:
        return self.obs_number[self.obs_variable == k]

    def value_counts(self, k: int) -> np.ndarray:
        codes = self.obs_code[self.obs_variable == k]
        return np.bincount(codes, minlength=len(self.tokens[k])).astype(np.int64)

    def observations(self):
        """Yield ``(instance_id, variable_name, value)`` in storage order."""
        names = self.schema.names
        for t in range(self.n_observations):
            k = int(self.obs_variable[t])
            if self.schema.variables[k].is_numeric:
                value = float(self.obs_number[t])
            else:
                value = self.tokens[k][int(self.obs_code[t])]
            yield self.instances[int(self.obs_instance[t])], names[k], value

    def to_long_csv(self, delimiter: str = ",") -> str:
        out = io.StringIO()
        writer = csv.writer(out, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["instance", "variable", "value"])
        for inst, name, value in self.observations():
            writer.writerow([inst, name, repr(value) if isinstance(value, float) else value])
        return out.getvalue()


# --------------------------------------------------------------------------- tokens


def _split_cell(cell: str, missing: str) -> list[str]:
    cell = cell.strip()
    if cell == missing or cell == "":
        return []
    if cell.startswith("{") and cell.endswith("}"):
        inner = cell[1:-1]
        return [t.strip() for t in inner.split(",") if t.strip() and t.strip() != missing]
    return [cell]


def _as_finite(token: str) -> float | None:
    try:
        x = float(token)
    except ValueError:
        return None
    return x if math.isfinite(x) else None


def _kind_of(tokens: Iterable[str]) -> str | None:
    """numeric iff every token parses as a finite real; None when there are no tokens."""
    seen = False
    for tok in tokens:
        seen = True
        if _as_finite(tok) is None:
            return CATEGORICAL
    return NUMERIC if seen else None


class _Builder:
    """Accumulates observations, then freezes them into a Dataset."""

    def __init__(self, schema: Schema):
        self.schema = schema
        self.instance_index: dict[str, int] = {}
        self.inst: list[int] = []
        self.var: list[int] = []
        self.raw: list[str] = []

    def instance(self, ident: str) -> int:
        i = self.instance_index.get(ident)
        if i is None:
            i = self.instance_index[ident] = len(self.instance_index)
        return i

    def add(self, i: int, k: int, token: str, where: str):
        if self.schema.variables[k].is_numeric and _as_finite(token) is None:
            raise ParseError(
                f"{where}: malformed numeric value {token!r} for variable "
                f"{self.schema.variables[k].name!r}"
            )
        self.inst.append(i)
        self.var.append(k)
        self.raw.append(token)

    def build(self, warn: Iterable[str] = ()) -> Dataset:
        n_vars = len(self.schema)
        n = len(self.raw)
        var = np.asarray(self.var, dtype=np.int64).reshape(n)
        number = np.zeros(n, dtype=np.float64)
        code = np.full(n, -1, dtype=np.int64)
        tokens: list[tuple[str, ...]] = []
        for k, v in enumerate(self.schema.variables):
            idx = np.flatnonzero(var == k)
            if v.is_numeric:
                number[idx] = [float(self.raw[t]) for t in idx]
                tokens.append(())
            else:
                toks = tuple(sorted({self.raw[t] for t in idx}))
                lookup = {tok: c for c, tok in enumerate(toks)}
                code[idx] = [lookup[self.raw[t]] for t in idx]
                tokens.append(toks)
        warn = list(warn)
        counts = np.bincount(var, minlength=n_vars)
        for k, v in enumerate(self.schema.variables):
            msg = f"variable {v.name!r} has no observations and is excluded from modeling"
            if counts[k] == 0 and msg not in warn:
                warn.append(msg)
        return Dataset(
            schema=self.schema,
            instances=tuple(self.instance_index),
            obs_instance=_readonly(np.asarray(self.inst, dtype=np.int64).reshape(n)),
            obs_variable=_readonly(var),
            obs_number=_readonly(number),
            obs_code=_readonly(code),
            tokens=tuple(tokens),
            warnings=tuple(warn),
        )


# --------------------------------------------------------------------------- wide format


def _read_rows(stream: TextIO, delimiter: str) -> tuple[list[str], list[list[str]]]:
    reader = csv.reader(stream, delimiter=delimiter, skipinitialspace=True)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("input has no header row") from None
    rows = [row for row in reader if row and any(c.strip() for c in row)]
    return header, rows


def _infer(header: list[str], rows: list[list[str]], missing: str) -> tuple[Schema, list[str]]:
    variables = []
    notes = []
    for c, name in enumerate(header):
        toks = (t for row in rows if c < len(row) for t in _split_cell(row[c], missing))
        kind = _kind_of(toks)
        if kind is None:
            notes.append(f"column {name!r} is entirely missing; typed categorical with V_k=0")
            kind = CATEGORICAL
        variables.append(Variable(name, kind))
    return Schema(tuple(variables)), notes


def infer_schema(
    stream: TextIO,
    delimiter: str = ",",
    missing: str = DEFAULT_MISSING,
    id_column: str = DEFAULT_ID_COLUMN,
) -> Schema:
    """Type every column of a wide table.

    A column is numeric iff all of its non-missing tokens parse as finite
    reals. All-missing columns become categorical and trigger a warning.
    """
    header, rows = _read_rows(stream, delimiter)
    if not rows:
        raise SchemaError("cannot infer a schema from zero data rows")
    keep = [c for c, h in enumerate(header) if h != id_column]
    schema, notes = _infer([header[c] for c in keep], [[r[c] if c < len(r) else "" for c in keep] for r in rows], missing)
    for note in notes:
        warnings.warn(note)
    return schema


def parse_wide_table(
    stream: TextIO,
    schema: Schema | None = None,
    delimiter: str = ",",
    missing: str = DEFAULT_MISSING,
    id_column: str = DEFAULT_ID_COLUMN,
) -> Dataset:
    header, rows = _read_rows(stream, delimiter)
    if len(set(header)) != len(header):
        dup = sorted({h for h in header if header.count(h) > 1})
        raise SchemaError(f"duplicate header names: {dup}")
    id_col = header.index(id_column) if id_column in header else None
    data_cols = [c for c in range(len(header)) if c != id_col]
    names = [header[c] for c in data_cols]
    notes: list[str] = []
    if schema is None:
        if not names:
            raise SchemaError("table has no variable columns")
        if rows:
            schema, notes = _infer(names, [[r[c] if c < len(r) else "" for c in data_cols] for r in rows], missing)
        else:
            schema = Schema(tuple(Variable(n, CATEGORICAL) for n in names))
    else:
        for n in names:
            schema.index(n)
    col_var = [schema.index(n) for n in names]

    b = _Builder(schema)
    for r, row in enumerate(rows, start=2):
        if len(row) > len(header):
            raise ParseError(f"row {r}: {len(row)} cells for {len(header)} columns")
        ident = row[id_col].strip() if id_col is not None and id_col < len(row) else str(r - 1)
        i = b.instance(ident)
        for c, k in zip(data_cols, col_var):
            if c >= len(row):
                continue
            for tok in _split_cell(row[c], missing):
                b.add(i, k, tok, f"row {r}, column {header[c]!r}")
    return b.build(notes)


# --------------------------------------------------------------------------- long format


def parse_long_observations(
    stream: TextIO,
    schema: Schema | None = None,
    delimiter: str = ",",
    missing: str = DEFAULT_MISSING,
) -> Dataset:
    """Read ``instance,variable,value`` triples; an optional header row is skipped."""
    reader = csv.reader(stream, delimiter=delimiter, skipinitialspace=True)
    triples = []
    for r, row in enumerate(reader, start=1):
        if not row or not any(c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ParseError(f"line {r}: expected 3 fields, got {len(row)}")
        row = [c.strip() for c in row]
        if r == 1 and row == ["instance", "variable", "value"]:
            continue
        triples.append((r, *row))

    if schema is None:
        order: dict[str, list[str]] = {}
        for _, _, name, value in triples:
            toks = order.setdefault(name, [])
            if value != missing:
                toks.append(value)
        schema = Schema(tuple(Variable(n, _kind_of(t) or CATEGORICAL) for n, t in order.items()))
    else:
        for r, _, name, _ in triples:
            try:
                schema.index(name)
            except SchemaError:
                raise SchemaError(f"line {r}: unknown variable {name!r}") from None

    b = _Builder(schema)
    index = {n: k for k, n in enumerate(schema.names)}
    for r, inst, name, value in triples:
        i = b.instance(inst)
        if value == missing:
            continue
        b.add(i, index[name], value, f"line {r}")
    return b.build()


def read_dataset(
    path: str | Path,
    fmt: str = "wide",
    schema: Schema | None = None,
    delimiter: str | None = None,
    missing: str = DEFAULT_MISSING,
) -> Dataset:
    path = Path(path)
    if delimiter is None:
        delimiter = "\t" if path.suffix.lower() in (".tsv", ".tab") else ","
    with open(path, newline="") as f:
        if fmt == "wide":
            return parse_wide_table(f, schema, delimiter=delimiter, missing=missing)
        if fmt == "long":
            return parse_long_observations(f, schema, delimiter=delimiter, missing=missing)
    raise ValueError(f"unknown format {fmt!r}")
