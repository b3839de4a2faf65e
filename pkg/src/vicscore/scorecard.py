"""Integer-point scoring tables built from categorised logistic regression.

Continuous variables are cut into left-closed, right-open intervals; the
logistic coefficients of the categorised model are shifted so each variable's
lowest category scores zero, scaled by the smallest positive shifted
coefficient, and rounded half-up to integers (capped at 100 total points).
"""

from __future__ import annotations

import csv
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.cluster import KMeans

from . import glm
from .errors import DataError, NumericalError
from .tabular import CATEGORICAL, CONTINUOUS, Cohort, VariableSchema, encode

QUANTILES = (0.05, 0.2, 0.8, 0.95)
MAX_TOTAL = 100


@dataclass(frozen=True)
class CutEntry:
    cuts: tuple[float, ...]
    method: str = "quantile"

    def __post_init__(self):
        c = tuple(float(x) for x in self.cuts)
        if not c:
            raise DataError("a cut set needs at least one cut point")
        if any(not math.isfinite(x) for x in c):
            raise DataError("cut points must be finite")
        if any(b <= a for a, b in zip(c, c[1:])):
            raise DataError(f"cut points must be strictly increasing, got {list(c)}")
        object.__setattr__(self, "cuts", c)

    def labels(self) -> tuple[str, ...]:
        f = [fmt_number(x) for x in self.cuts]
        mids = [f"[{a},{b})" for a, b in zip(f, f[1:])]
        return (f"<{f[0]}", *mids, f">={f[-1]}")

    def codes(self, x: np.ndarray) -> np.ndarray:
        """Interval index per value; a value equal to a cut goes to the upper interval."""
        return np.searchsorted(np.asarray(self.cuts), x, side="right")


CutSet = dict  # variable -> CutEntry


def fmt_number(x: float) -> str:
    r = repr(float(x))
    return r[:-2] if r.endswith(".0") else r


def make_cuts(cohort: Cohort, variable: str, method: str = "quantile", k: int = 5, seed: int = 0) -> CutEntry:
    """Automatic cut points from the train partition."""
    v = cohort.variable(variable)
    if v.kind != CONTINUOUS:
        raise DataError(f"variable {variable!r} is not continuous")
    vals = cohort.values[variable][cohort.rows("train")]
    if np.isnan(vals).any():
        raise DataError(f"variable {variable!r} has missing train values; impute first")
    distinct = np.unique(vals)
    if len(distinct) < 2:
        raise DataError(f"variable {variable!r} has fewer than 2 distinct values")
    if method == "quantile":
        cuts = np.unique(np.quantile(vals, QUANTILES))
    elif method == "kmeans":
        k = min(k, len(distinct))
        km = KMeans(n_clusters=k, n_init=10, random_state=seed).fit(vals.reshape(-1, 1))
        centers = np.unique(km.cluster_centers_.ravel())
        cuts = (centers[:-1] + centers[1:]) / 2
    else:
        raise DataError(f"unknown cut method {method!r}")
    # a cut at or below the minimum would leave an empty lowest interval
    cuts = cuts[cuts > distinct[0]]
    if len(cuts) == 0:
        cuts = distinct[1:2]
    return CutEntry(tuple(cuts), method)


def categorize(cohort: Cohort, cuts: Mapping[str, CutEntry]) -> Cohort:
    """Replace each cut continuous variable by a categorical interval variable."""
    schema, updates = [], {}
    for v in cohort.schema:
        if v.name in cuts and v.kind == CONTINUOUS:
            entry = cuts[v.name]
            col = cohort.values[v.name]
            if np.isnan(col).any():
                raise DataError(f"variable {v.name!r} has missing values; impute first")
            schema.append(VariableSchema(v.name, CATEGORICAL, entry.labels(), v.unit))
            updates[v.name] = entry.codes(col)
        else:
            schema.append(v)
    vals = dict(cohort.values)
    vals.update(updates)
    return Cohort(tuple(schema), vals, cohort.outcome, cohort.outcome_name, cohort.partition)


# --------------------------------------------------------------------------
# scoring table
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class VariablePoints:
    variable: str
    kind: str
    labels: tuple[str, ...]
    points: tuple[int, ...]
    cuts: CutEntry | None = None

    @property
    def max_points(self) -> int:
        return max(self.points)

    def lookup(self, value) -> int:
        if self.kind == CONTINUOUS:
            try:
                x = float(value)
            except (TypeError, ValueError):
                raise DataError(f"variable {self.variable!r}: not a number: {value!r}") from None
            if math.isnan(x):
                raise DataError(f"variable {self.variable!r}: missing value")
            return self.points[int(self.cuts.codes(np.array([x]))[0])]
        label = str(value)
        if label not in self.labels:
            raise DataError(f"variable {self.variable!r}: unseen category {label!r}")
        return self.points[self.labels.index(label)]


@dataclass(frozen=True)
class ScoringTable:
    variables: tuple[VariablePoints, ...]

    @property
    def names(self) -> list[str]:
        return [v.variable for v in self.variables]

    @property
    def max_total(self) -> int:
        return sum(v.max_points for v in self.variables)

    @property
    def cuts(self) -> dict[str, CutEntry]:
        return {v.variable: v.cuts for v in self.variables if v.cuts is not None}

    def __getitem__(self, name: str) -> VariablePoints:
        for v in self.variables:
            if v.variable == name:
                return v
        raise KeyError(name)


def score_row(table: ScoringTable, row: Mapping[str, object]) -> int:
    """Total points of one raw record (continuous values or category labels)."""
    total = 0
    for vp in table.variables:
        if vp.variable not in row or row[vp.variable] in (None, ""):
            raise DataError(f"row lacks a value for {vp.variable!r}")
        total += vp.lookup(row[vp.variable])
    return total


def score_cohort(table: ScoringTable, cohort: Cohort, partition: str | None = None) -> np.ndarray:
    rows = cohort.rows(partition)
    total = np.zeros(len(rows), dtype=np.int64)
    for vp in table.variables:
        v = cohort.variable(vp.variable)
        col = cohort.values[vp.variable][rows]
        pts = np.asarray(vp.points, dtype=np.int64)
        if vp.kind == CONTINUOUS:
            if v.kind != CONTINUOUS:
                raise DataError(f"variable {vp.variable!r} is categorical in the data")
            if np.isnan(col).any():
                raise DataError(f"variable {vp.variable!r} has missing values")
            total += pts[vp.cuts.codes(col)]
        else:
            if tuple(v.categories) != vp.labels:
                index = {lab: i for i, lab in enumerate(vp.labels)}
                try:
                    remap = np.array([index[c] for c in v.categories])
                except KeyError as exc:
                    raise DataError(f"variable {vp.variable!r}: unseen category {exc.args[0]!r}") from None
                col = remap[col]
            total += pts[col]
    return total


def round_half_up(x) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def points_from_coefficients(shifted: Sequence[np.ndarray], cap: int = MAX_TOTAL) -> list[np.ndarray]:
    """Scale shifted (non-negative, min 0) per-variable coefficients to integer points."""
    shifted = [np.asarray(s, dtype=np.float64) for s in shifted]
    flat = np.concatenate(shifted)
    # gaps at round-off level relative to the largest coefficient count as zero
    tiny = 1e-9 * flat.max() if len(flat) else 0.0
    shifted = [np.where(s > tiny, s, 0.0) for s in shifted]
    positive = flat[flat > tiny]
    if len(positive) == 0:
        raise NumericalError("all shifted coefficients are zero; the variables carry no discrimination")
    scaled = [s / positive.min() for s in shifted]
    pts = [round_half_up(s) for s in scaled]
    if sum(int(p.max()) for p in pts) > cap:
        factor = cap / sum(float(s.max()) for s in scaled)
        pts = [round_half_up(s * factor) for s in scaled]
        while sum(int(p.max()) for p in pts) > cap:
            factor *= 0.999
            pts = [round_half_up(s * factor) for s in scaled]
    return pts


def derive_points(cohort: Cohort, variables: Sequence[str], cuts: Mapping[str, CutEntry]) -> ScoringTable:
    """Fit the categorised logistic model on train and convert it to integer points."""
    variables = list(variables)
    if not variables:
        raise DataError("derive_points needs at least one variable")
    need = {v: cuts[v] for v in variables if cohort.variable(v).kind == CONTINUOUS and v in cuts}
    missing = [v for v in variables if cohort.variable(v).kind == CONTINUOUS and v not in cuts]
    if missing:
        raise DataError(f"continuous variables without cut points: {missing}")
    cat = categorize(cohort, need)
    design, y = encode(cat, "train", variables)
    model = glm.fit_logistic(design, y)
    shifted = []
    for v in variables:
        coefs = np.concatenate([[0.0], model.betas[list(design.groups[v])]])
        shifted.append(coefs - coefs.min())
    pts = points_from_coefficients(shifted)
    out = []
    for v, p in zip(variables, pts):
        schema = cat.variable(v)
        kind = CONTINUOUS if v in need else CATEGORICAL
        out.append(VariablePoints(v, kind, schema.categories, tuple(int(x) for x in p), need.get(v)))
    return ScoringTable(tuple(out))


def fine_tune(cohort: Cohort, table: ScoringTable, overrides: Mapping[str, Sequence[float]]) -> ScoringTable:
    """Re-derive points after replacing automatic cuts with manual ones."""
    cuts = dict(table.cuts)
    for name, manual in overrides.items():
        if name not in table.names:
            raise DataError(f"fine-tune override for {name!r}, which is not in the scoring table")
        if table[name].kind != CONTINUOUS:
            raise DataError(f"fine-tune override for categorical variable {name!r}")
        entry = CutEntry(tuple(manual), "manual")
        if entry.cuts != table[name].cuts.cuts:
            cuts[name] = entry
    return derive_points(cohort, table.names, cuts)


# --------------------------------------------------------------------------
# parsimony
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ParsimonyPoint:
    m: int
    variable: str
    auc: float


def parsimony_point(cohort: Cohort, ranking: Sequence[str], cuts: Mapping[str, CutEntry], m: int,
                    partition: str = "validation") -> ParsimonyPoint:
    table = derive_points(cohort, ranking[:m], cuts)
    scores = score_cohort(table, cohort, partition)
    return ParsimonyPoint(m, ranking[m - 1], glm.auc(scores, cohort.outcome[cohort.rows(partition)]))


def parsimony(
    cohort: Cohort,
    ranking: Sequence[str],
    cuts: Mapping[str, CutEntry],
    partition: str = "validation",
    threads: int = 1,
) -> list[ParsimonyPoint]:
    """Validation AUC of the integer score as ranked variables are added one by one."""
    ranking = list(ranking)
    if not ranking:
        raise DataError("parsimony needs a non-empty ranking")
    ms = range(1, len(ranking) + 1)
    fn = lambda m: parsimony_point(cohort, ranking, cuts, m, partition)
    if threads <= 1:
        return [fn(m) for m in ms]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, ms))


def suggest_m(curve: Sequence[ParsimonyPoint], min_gain: float = 0.01) -> int:
    """Smallest m after which adding the next variable gains less than ``min_gain`` AUC.

    A non-positive gain always stops the search, so ``min_gain=0`` picks the first
    m whose successor does not improve the AUC.
    """
    if not curve:
        raise DataError("empty parsimony curve")
    for a, b in zip(curve, curve[1:]):
        gain = b.auc - a.auc
        if gain < min_gain or gain <= 0:
            return a.m
    return curve[-1].m


# --------------------------------------------------------------------------
# serialisation
# --------------------------------------------------------------------------

TABLE_FIELDS = ("variable", "interval_or_category", "points", "kind")
_INTERVAL = re.compile(r"^(?:<(?P<lt>[^,]+)|\[(?P<lo>[^,]+),(?P<hi>[^,]+)\)|>=(?P<ge>[^,]+))$")


def write_scoring_table(path: str | Path, table: ScoringTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_FIELDS)
        for vp in table.variables:
            for label, p in zip(vp.labels, vp.points):
                w.writerow([vp.variable, label, p, vp.kind])


def _cuts_from_labels(name: str, labels: list[str]) -> CutEntry:
    matches = [_INTERVAL.match(lab) for lab in labels]
    for lab, m in zip(labels, matches):
        if m is None:
            raise DataError(f"scoring table: cannot parse interval {lab!r} of {name!r}")
    if len(matches) < 2 or matches[0].group("lt") is None:
        raise DataError(f"scoring table: intervals of {name!r} must start with '<'")
    # lowest interval gives the first cut, each middle interval its upper end
    cuts = [float(matches[0].group("lt"))] + [float(m.group("hi")) for m in matches[1:-1] if m.group("hi")]
    try:
        entry = CutEntry(tuple(cuts), "manual")
    except DataError:
        raise DataError(f"scoring table: intervals of {name!r} are not contiguous") from None
    if entry.labels() != tuple(labels):
        raise DataError(f"scoring table: intervals of {name!r} are not contiguous")
    return entry


def read_scoring_table(path: str | Path) -> ScoringTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(TABLE_FIELDS[:3]) <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns {TABLE_FIELDS}")
        rows = list(reader)
    grouped: dict[str, list[dict]] = {}
    for r in rows:
        grouped.setdefault(r["variable"], []).append(r)
    out = []
    for name, rs in grouped.items():
        labels = [r["interval_or_category"] for r in rs]
        try:
            points = tuple(int(r["points"]) for r in rs)
        except ValueError:
            raise DataError(f"{path}: non-integer points for {name!r}") from None
        kind = rs[0].get("kind") or (
            CONTINUOUS if all(_INTERVAL.match(l) for l in labels) else CATEGORICAL
        )
        if kind == CONTINUOUS:
            out.append(VariablePoints(name, CONTINUOUS, tuple(labels), points, _cuts_from_labels(name, labels)))
        else:
            out.append(VariablePoints(name, CATEGORICAL, tuple(labels), points))
    if not out:
        raise DataError(f"{path}: empty scoring table")
    return ScoringTable(tuple(out))


def write_parsimony(path: str | Path, curve: Sequence[ParsimonyPoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "variable", "auc"])
        for p in curve:
            w.writerow([p.m, p.variable, repr(p.auc)])
