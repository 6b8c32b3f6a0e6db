"""Column-typed in-memory tables with explicit missingness masks.

The Dataset is the currency between the data generators, the imputation
engine, and the estimators: a rectangular block of numeric storage where
every cell carries a missing flag, plus per-column kind metadata
(continuous, binary, or categorical with named levels).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

KINDS = ("continuous", "binary", "categorical")

MISSING_TOKEN = "NA"


class SchemaError(ValueError):
    """Schema/kind violation (unknown kind, bad level, non-binary cell)."""


class ParseError(ValueError):
    """Malformed table file; message carries the offending row number."""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown column kind {self.kind!r} for {self.name!r}")
        if self.kind == "categorical" and len(self.levels) < 2:
            raise SchemaError(f"categorical column {self.name!r} needs >= 2 levels")
        if self.kind != "categorical" and self.levels:
            raise SchemaError(f"levels given for non-categorical column {self.name!r}")


class Dataset:
    """Immutable rectangular table: (n_rows x n_cols) values + missing mask."""

    def __init__(self, columns, values, mask=None):
        self.columns = tuple(columns)
        values = np.asarray(values, dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be 2-D (n_rows x n_cols)")
        if values.shape[1] != len(self.columns):
            raise ValueError(
                f"{len(self.columns)} columns declared but values have "
                f"{values.shape[1]} columns"
            )
        if mask is None:
            mask = np.zeros(values.shape, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != values.shape:
            raise ValueError("mask shape must match values shape")
        self._values = values.copy()
        self._mask = mask.copy()
        self._index = {c.name: i for i, c in enumerate(self.columns)}
        if len(self._index) != len(self.columns):
            raise SchemaError("duplicate column names")
        self._validate_cells()
        self._values.flags.writeable = False
        self._mask.flags.writeable = False

    def _validate_cells(self):
        for j, col in enumerate(self.columns):
            obs = self._values[~self._mask[:, j], j]
            if col.kind == "binary":
                if not np.all((obs == 0) | (obs == 1)):
                    raise SchemaError(f"binary column {col.name!r} has cells outside {{0,1}}")
            elif col.kind == "categorical":
                ok = (obs == np.floor(obs)) & (obs >= 0) & (obs < len(col.levels))
                if not np.all(ok):
                    raise SchemaError(f"categorical column {col.name!r} has invalid level index")
            else:
                if not np.all(np.isfinite(obs)):
                    raise SchemaError(f"continuous column {col.name!r} has non-finite observed cell")

    # -- basic accessors -------------------------------------------------

    @property
    def n_rows(self) -> int:
        return self._values.shape[0]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def mask(self) -> np.ndarray:
        return self._mask

    def column_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"no column named {name!r}") from None

    def column_def(self, name: str) -> Column:
        return self.columns[self.column_index(name)]

    def column(self, name: str) -> np.ndarray:
        return self._values[:, self.column_index(name)]

    def mask_of(self, name: str) -> np.ndarray:
        return self._mask[:, self.column_index(name)]

    def is_fully_observed(self, name: str) -> bool:
        return not self.mask_of(name).any()

    # -- derived tables --------------------------------------------------

    def take(self, row_idx) -> "Dataset":
        row_idx = np.asarray(row_idx)
        return Dataset(self.columns, self._values[row_idx], self._mask[row_idx])

    def select(self, names) -> "Dataset":
        idx = [self.column_index(n) for n in names]
        return Dataset([self.columns[i] for i in idx], self._values[:, idx], self._mask[:, idx])

    def drop(self, names) -> "Dataset":
        gone = set(names)
        keep = [c.name for c in self.columns if c.name not in gone]
        return self.select(keep)

    def with_column(self, column: Column, values, mask=None) -> "Dataset":
        values = np.asarray(values, dtype=float).reshape(-1, 1)
        if mask is None:
            mask = np.zeros(values.shape, dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool).reshape(-1, 1)
        return Dataset(
            self.columns + (column,),
            np.hstack([self._values, values]),
            np.hstack([self._mask, mask]),
        )

    def with_values(self, name: str, values, mask=None) -> "Dataset":
        """Copy with one column's cells (and mask) replaced."""
        j = self.column_index(name)
        vals = np.array(self._values)
        msk = np.array(self._mask)
        vals[:, j] = values
        msk[:, j] = False if mask is None else mask
        return Dataset(self.columns, vals, msk)

    @staticmethod
    def build(spec) -> "Dataset":
        """Assemble from (Column, values[, mask]) triples."""
        cols, vals, masks = [], [], []
        for entry in spec:
            col, v = entry[0], np.asarray(entry[1], dtype=float)
            m = entry[2] if len(entry) > 2 else np.zeros(v.shape, dtype=bool)
            cols.append(col)
            vals.append(v)
            masks.append(np.asarray(m, dtype=bool))
        return Dataset(cols, np.column_stack(vals), np.column_stack(masks))

    def __repr__(self):
        return f"Dataset({self.n_rows} rows, columns={list(self.names)})"


def complete_case_filter(d: Dataset, indicator: str) -> Dataset:
    """Rows where the (binary, fully observed) indicator column equals 1."""
    col = d.column_def(indicator)
    if col.kind != "binary":
        raise SchemaError(f"indicator column {indicator!r} must be binary")
    if not d.is_fully_observed(indicator):
        raise SchemaError(f"indicator column {indicator!r} has missing cells")
    return d.take(np.flatnonzero(d.column(indicator) == 1))


# -- formula terms and design matrices -----------------------------------


def _parse_factor(tok: str):
    tok = tok.strip()
    if tok.startswith("I(") and tok.endswith(")"):
        body = tok[2:-1]
        for op in ("<", ">"):
            if op in body:
                name, cut = body.split(op, 1)
                return ("indicator", name.strip(), op, float(cut))
        raise ValueError(f"indicator term {tok!r} must contain '<' or '>'")
    return ("column", tok)


def parse_term(term: str):
    """Split a term like 'W_s*I(Z_s<-1)' into factors."""
    return [_parse_factor(t) for t in term.split("*")]


def _factor_columns(d: Dataset, factor):
    if factor[0] == "indicator":
        _, name, op, cut = factor
        v = d.column(name)
        _require_observed(d, name)
        arr = (v < cut) if op == "<" else (v > cut)
        return [arr.astype(float)], [f"I({name}{op}{cut:g})"]
    _, name = factor
    _require_observed(d, name)
    col = d.column_def(name)
    v = d.column(name)
    if col.kind == "categorical":
        # reference coding: first declared level is the baseline
        cols = [(v == lvl_idx).astype(float) for lvl_idx in range(1, len(col.levels))]
        labels = [f"{name}[{lvl}]" for lvl in col.levels[1:]]
        return cols, labels
    return [v.astype(float)], [name]


def _require_observed(d: Dataset, name: str):
    if not d.is_fully_observed(name):
        raise ValueError(f"column {name!r} has missing cells; filter or impute before building a design")


def design_matrix(d: Dataset, formula) -> np.ndarray:
    """Design matrix with a leading intercept column.

    Terms are main effects, '*' products, and threshold indicators
    I(col<c) / I(col>c); categorical factors expand to reference-coded
    dummies and products distribute over the expansion.
    """
    mat, _ = design_matrix_labeled(d, formula)
    return mat


def design_matrix_labeled(d: Dataset, formula):
    cols: list[np.ndarray] = [np.ones(d.n_rows)]
    labels: list[str] = ["(intercept)"]
    for term in formula:
        parts = [_factor_columns(d, f) for f in parse_term(term)]
        prod_cols, prod_labels = parts[0]
        for more_cols, more_labels in parts[1:]:
            prod_cols = [a * b for a in prod_cols for b in more_cols]
            prod_labels = [f"{la}*{lb}" for la in prod_labels for lb in more_labels]
        cols.extend(prod_cols)
        labels.extend(prod_labels)
    return np.column_stack(cols), labels


def term_index(d: Dataset, formula, term: str) -> int:
    """Position of a single-column term in the design matrix of `formula`."""
    _, labels = design_matrix_labeled(d.take(np.arange(0)), formula)
    try:
        return labels.index(term)
    except ValueError:
        raise KeyError(f"term {term!r} not a single design column of {formula}") from None


# -- file I/O -------------------------------------------------------------


def _parse_cell(raw: str, col: Column, row_no: int):
    if raw == MISSING_TOKEN:
        return np.nan, True
    if col.kind == "categorical":
        try:
            return float(col.levels.index(raw)), False
        except ValueError:
            raise ParseError(
                f"row {row_no}: {raw!r} is not a level of categorical column {col.name!r}"
            ) from None
    try:
        v = float(raw)
    except ValueError:
        raise ParseError(
            f"row {row_no}: non-numeric cell {raw!r} in numeric column {col.name!r}"
        ) from None
    if col.kind == "binary" and v not in (0.0, 1.0):
        raise ParseError(f"row {row_no}: binary column {col.name!r} has value {raw!r}")
    return v, False


def load_table(path, schema) -> Dataset:
    """Read a comma-separated table (header row, NA = missing, UTF-8).

    `schema` is a sequence of Column declarations; the file must contain
    exactly those columns. Column order follows the file header.
    """
    by_name = {c.name: c for c in schema}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file: header row required") from None
        missing_cols = [n for n in by_name if n not in header]
        if missing_cols:
            raise SchemaError(f"declared column {missing_cols[0]!r} absent from file header")
        unknown = [n for n in header if n not in by_name]
        if unknown:
            raise SchemaError(f"file column {unknown[0]!r} not declared in schema")
        columns = [by_name[n] for n in header]
        rows, masks = [], []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"row {row_no}: expected {len(header)} cells, got {len(row)}")
            parsed = [_parse_cell(raw, col, row_no) for raw, col in zip(row, columns)]
            rows.append([p[0] for p in parsed])
            masks.append([p[1] for p in parsed])
    n = len(rows)
    values = np.asarray(rows, dtype=float) if n else np.empty((0, len(columns)))
    mask = np.asarray(masks, dtype=bool) if n else np.empty((0, len(columns)), dtype=bool)
    return Dataset(columns, values, mask)


def _format_cell(v: float, masked: bool, col: Column) -> str:
    if masked:
        return MISSING_TOKEN
    if col.kind == "categorical":
        return col.levels[int(v)]
    if col.kind == "binary":
        return str(int(v))
    return f"{v:.17g}"


def write_table(d: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(d.names)
        for i in range(d.n_rows):
            writer.writerow(
                _format_cell(d.values[i, j], d.mask[i, j], col)
                for j, col in enumerate(d.columns)
            )
