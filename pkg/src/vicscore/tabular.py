"""Typed tabular cohorts: ingestion, partitioning, imputation and design-matrix encoding."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .errors import DataError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
PARTITIONS = ("train", "validation", "test")


@dataclass(frozen=True)
class VariableSchema:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    unit: str | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise DataError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if len(self.categories) < 2:
                raise DataError(f"variable {self.name!r}: categorical variables need >= 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise DataError(f"variable {self.name!r}: duplicate category labels")
        elif self.categories:
            raise DataError(f"variable {self.name!r}: continuous variables take no categories")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "role": "predictor"}
        if self.categories:
            d["categories"] = list(self.categories)
        if self.unit:
            d["unit"] = self.unit
        return d


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Cohort:
    """Immutable column store.

    Continuous columns are float64 with NaN marking missing cells; categorical
    columns hold integer codes into ``VariableSchema.categories`` (-1 = missing).
    ``partition`` is ``None`` until :func:`split` has run.
    """

    schema: tuple[VariableSchema, ...]
    values: Mapping[str, np.ndarray]
    outcome: np.ndarray
    outcome_name: str = "outcome"
    partition: np.ndarray | None = None

    def __post_init__(self):
        names = [v.name for v in self.schema]
        if len(set(names)) != len(names):
            raise DataError("variable names must be unique")
        if self.outcome_name in names:
            raise DataError(f"outcome {self.outcome_name!r} also declared as a predictor")
        n = len(self.outcome)
        cols = {}
        for v in self.schema:
            if v.name not in self.values:
                raise DataError(f"no values for variable {v.name!r}")
            col = np.asarray(self.values[v.name])
            if col.shape != (n,):
                raise DataError(f"variable {v.name!r}: expected {n} values, got {col.shape}")
            cols[v.name] = _frozen(col.astype(np.int64 if v.is_categorical else np.float64))
        object.__setattr__(self, "values", cols)
        object.__setattr__(self, "outcome", _frozen(np.asarray(self.outcome, dtype=np.int64)))
        if self.partition is not None:
            object.__setattr__(self, "partition", _frozen(np.asarray(self.partition, dtype="<U10")))

    @property
    def n(self) -> int:
        return len(self.outcome)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.schema]

    def variable(self, name: str) -> VariableSchema:
        for v in self.schema:
            if v.name == name:
                return v
        raise DataError(f"unknown variable {name!r}")

    def rows(self, partition: str | None) -> np.ndarray:
        """Row indices of a partition (all rows for ``None``), in file order."""
        if partition is None:
            return np.arange(self.n)
        if self.partition is None:
            raise DataError("cohort has not been split into partitions")
        if partition not in PARTITIONS:
            raise DataError(f"unknown partition {partition!r}")
        return np.flatnonzero(self.partition == partition)

    def missing(self, name: str) -> np.ndarray:
        col = self.values[name]
        return col < 0 if self.variable(name).is_categorical else np.isnan(col)

    def labels(self, name: str, rows: np.ndarray | None = None) -> list[str]:
        """Raw (string) values of a categorical variable."""
        v = self.variable(name)
        codes = self.values[name] if rows is None else self.values[name][rows]
        return [v.categories[c] if c >= 0 else "" for c in codes]

    def with_values(self, **updates) -> "Cohort":
        vals = dict(self.values)
        vals.update(updates)
        return replace(self, values=vals)


@dataclass(frozen=True)
class DesignMatrix:
    """Numeric predictor matrix without an intercept column.

    ``column_map[i]`` is ``(variable, category)``; ``category`` is ``None`` for
    continuous pass-through columns.
    """

    X: np.ndarray
    column_map: tuple[tuple[str, str | None], ...]
    variables: tuple[str, ...]
    intercept: bool = True
    groups: Mapping[str, tuple[int, ...]] = field(default_factory=dict)

    @property
    def columns(self) -> list[str]:
        return [v if c is None else f"{v}={c}" for v, c in self.column_map]

    @property
    def shape(self) -> tuple[int, int]:
        return self.X.shape

    def group_index(self) -> list[np.ndarray]:
        """Column indices per variable, in ``variables`` order."""
        return [np.asarray(self.groups[v], dtype=np.int64) for v in self.variables]


# --------------------------------------------------------------------------
# schema / data files
# --------------------------------------------------------------------------

def load_schema(path: str | Path) -> tuple[list[VariableSchema], str]:
    """Read a YAML/JSON schema. Returns predictor schemas and the outcome column name."""
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if isinstance(raw, dict):
        entries = raw.get("variables")
    else:
        entries = raw
    if not entries:
        raise DataError(f"{path}: schema declares no variables")
    predictors, outcome = [], []
    for e in entries:
        role = e.get("role", "predictor")
        if role == "outcome":
            outcome.append(e["name"])
            continue
        if role != "predictor":
            raise DataError(f"{path}: variable {e.get('name')!r} has unknown role {role!r}")
        predictors.append(
            VariableSchema(
                name=str(e["name"]),
                kind=e.get("kind", CONTINUOUS),
                categories=tuple(str(c) for c in e.get("categories", ())),
                unit=e.get("unit"),
            )
        )
    if isinstance(raw, dict) and "outcome" in raw and not outcome:
        outcome.append(raw["outcome"])
    if len(outcome) != 1:
        raise DataError(f"{path}: schema must declare exactly one outcome column")
    return predictors, outcome[0]


def write_schema(path: str | Path, schema: Sequence[VariableSchema], outcome_name: str) -> None:
    entries = [v.to_dict() for v in schema]
    entries.append({"name": outcome_name, "role": "outcome"})
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump({"variables": entries}, fh, sort_keys=False)


def load_cohort(path: str | Path, schema_path: str | Path, delimiter: str = ",") -> Cohort:
    """Parse a delimited data file against its schema.

    Blank continuous cells become NaN. Errors name the offending line and column.
    """
    schema, outcome_name = load_schema(schema_path)
    by_name = {v.name: v for v in schema}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for h in header:
            if h != outcome_name and h not in by_name:
                raise DataError(f"{path}: unknown column {h!r}")
        for name in [*by_name, outcome_name]:
            if name not in header:
                raise DataError(f"{path}: column {name!r} declared in schema but absent from header")
        pos = {h: i for i, h in enumerate(header)}
        cols: dict[str, list] = {v.name: [] for v in schema}
        outcome = []
        code_of = {v.name: {c: i for i, c in enumerate(v.categories)} for v in schema if v.is_categorical}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(rec)}")
            for v in schema:
                cell = rec[pos[v.name]].strip()
                if v.is_categorical:
                    if cell == "":
                        raise DataError(f"{path}: line {lineno}, column {v.name!r}: categorical value missing")
                    if cell not in code_of[v.name]:
                        raise DataError(
                            f"{path}: line {lineno}, column {v.name!r}: unseen category {cell!r} "
                            f"(declared {list(v.categories)})"
                        )
                    cols[v.name].append(code_of[v.name][cell])
                elif cell == "":
                    cols[v.name].append(math.nan)
                else:
                    try:
                        cols[v.name].append(float(cell))
                    except ValueError:
                        raise DataError(f"{path}: line {lineno}, column {v.name!r}: not a number: {cell!r}") from None
            y = rec[pos[outcome_name]].strip()
            if y not in ("0", "1"):
                raise DataError(f"{path}: line {lineno}, column {outcome_name!r}: non-binary outcome {y!r}")
            outcome.append(int(y))
    if not outcome:
        raise DataError(f"{path}: empty file (header only)")
    return Cohort(tuple(schema), {k: np.asarray(v) for k, v in cols.items()}, np.asarray(outcome), outcome_name)


def _fmt(x: float) -> str:
    if math.isnan(x):
        return ""
    r = repr(float(x))
    return r[:-2] if r.endswith(".0") else r


def write_cohort(cohort: Cohort, path: str | Path, delimiter: str = ",") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow([*cohort.names, cohort.outcome_name])
        cols = []
        for v in cohort.schema:
            if v.is_categorical:
                cols.append(cohort.labels(v.name))
            else:
                cols.append([_fmt(x) for x in cohort.values[v.name]])
        for i in range(cohort.n):
            w.writerow([c[i] for c in cols] + [str(cohort.outcome[i])])


# --------------------------------------------------------------------------
# partitioning and imputation
# --------------------------------------------------------------------------

def split(cohort: Cohort, fractions: Sequence[float] = (0.7, 0.1, 0.2), seed: int = 0) -> Cohort:
    """Assign train/validation/test labels by a seeded shuffle.

    Validation and test receive ``floor(n * f)`` rows; the remainder goes to train.
    """
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise DataError(f"split fractions must be three positive numbers summing to 1, got {fractions}")
    n = cohort.n
    n_val = int(math.floor(n * fractions[1] + 1e-9))
    n_test = int(math.floor(n * fractions[2] + 1e-9))
    n_train = n - n_val - n_test
    order = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype="<U10")
    labels[order[:n_train]] = "train"
    labels[order[n_train:n_train + n_val]] = "validation"
    labels[order[n_train + n_val:]] = "test"
    for part, size in zip(PARTITIONS, (n_train, n_val, n_test)):
        if size < 2:
            raise DataError(f"split leaves partition {part!r} with {size} row(s); need at least 2")
        y = cohort.outcome[labels == part]
        if y.min() == y.max():
            raise DataError(f"split leaves partition {part!r} with a single outcome class")
    return replace(cohort, partition=labels)


def impute_median(cohort: Cohort, source: str = "train") -> Cohort:
    """Fill missing continuous cells with the median of the ``source`` partition."""
    src = cohort.rows(source)
    if len(src) == 0:
        raise DataError(f"imputation source partition {source!r} is empty")
    updates = {}
    for v in cohort.schema:
        miss = cohort.missing(v.name)
        if not miss.any():
            continue
        if v.is_categorical:
            raise DataError(f"variable {v.name!r}: missing categorical values are not supported")
        pool = cohort.values[v.name][src]
        pool = pool[~np.isnan(pool)]
        if len(pool) == 0:
            raise DataError(f"variable {v.name!r} is entirely missing in partition {source!r}")
        col = cohort.values[v.name].copy()
        col[miss] = np.median(pool)
        updates[v.name] = col
    return cohort.with_values(**updates) if updates else cohort


# --------------------------------------------------------------------------
# encoding
# --------------------------------------------------------------------------

def encode(
    cohort: Cohort, partition: str | None, variables: Iterable[str] | None = None
) -> tuple[DesignMatrix, np.ndarray]:
    """Reference-cell design matrix (first declared category as reference) plus outcome."""
    variables = tuple(cohort.names if variables is None else variables)
    rows = cohort.rows(partition)
    blocks, cmap, groups = [], [], {}
    for name in variables:
        v = cohort.variable(name)
        col = cohort.values[name][rows]
        bad = (col < 0) if v.is_categorical else np.isnan(col)
        if bad.any():
            raise DataError(
                f"variable {name!r} has {int(bad.sum())} missing cell(s) in partition {partition!r}; "
                "run impute_median first"
            )
        start = len(cmap)
        if v.is_categorical:
            for k, cat in enumerate(v.categories[1:], start=1):
                blocks.append((col == k).astype(np.float64))
                cmap.append((name, cat))
        else:
            blocks.append(col.astype(np.float64))
            cmap.append((name, None))
        groups[name] = tuple(range(start, len(cmap)))
    X = np.column_stack(blocks) if blocks else np.empty((len(rows), 0))
    X.setflags(write=False)
    y = cohort.outcome[rows]
    return DesignMatrix(X, tuple(cmap), variables, True, groups), y
