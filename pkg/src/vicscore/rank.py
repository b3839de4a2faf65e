"""Variable ranking: pairwise-significance ensemble ranks and a random-forest baseline."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm
from sklearn.ensemble import RandomForestClassifier

from .errors import DataError
from .tabular import Cohort, encode


@dataclass(frozen=True)
class RankEntry:
    variable: str
    per_model_ranks: tuple[int, ...]
    mean_rank: float
    final_order: int
    importance: float = float("nan")


@dataclass(frozen=True)
class RankTable:
    entries: tuple[RankEntry, ...]
    method: str

    @property
    def order(self) -> list[str]:
        """Variables by final position."""
        return [e.variable for e in sorted(self.entries, key=lambda e: e.final_order)]

    def entry(self, variable: str) -> RankEntry:
        for e in self.entries:
            if e.variable == variable:
                return e
        raise KeyError(variable)

    __getitem__ = entry


def tied_ranks(wins) -> np.ndarray:
    """Competition ranking by descending wins: ties share the smallest available rank."""
    w = np.asarray(wins)
    return np.array([1 + int(np.sum(w > x)) for x in w], dtype=np.int64)


def rank_within_model(values, ses, alpha: float = 0.05) -> np.ndarray:
    """Rank variables in one model by the number of significantly smaller rivals.

    Variable j beats k when ``(v_j - v_k) / sqrt(se_j^2 + se_k^2)`` exceeds the
    two-sided normal critical value at level ``alpha``.
    """
    v = np.asarray(values, dtype=np.float64)
    s = np.asarray(ses, dtype=np.float64)
    if v.ndim != 1 or len(v) < 2 or v.shape != s.shape:
        raise DataError("rank_within_model needs matching value/se vectors with d >= 2")
    if not np.all(np.isfinite(s)):
        raise DataError("standard errors must be finite")
    z_crit = norm.ppf(1 - alpha / 2)
    diff = v[:, None] - v[None, :]
    sd = np.sqrt(s[:, None] ** 2 + s[None, :] ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, diff / np.where(sd > 0, sd, 1.0), np.sign(diff) * np.inf)
    beats = z > z_crit
    np.fill_diagonal(beats, False)
    return tied_ranks(beats.sum(axis=1))


def ensemble_rank(
    per_model_ranks,
    variables: Sequence[str],
    pooled_mean: Mapping[str, float] | None = None,
) -> RankTable:
    """Average ranks over models; ties by pooled mean (descending), then input order."""
    R = np.asarray(per_model_ranks, dtype=np.int64)
    if R.ndim != 2 or R.shape[1] != len(variables):
        raise DataError("per_model_ranks must be an (M, d) array aligned with variables")
    mean_rank = R.mean(axis=0)
    pm = pooled_mean or {}
    key = lambda j: (mean_rank[j], -pm.get(variables[j], 0.0), j)
    order = sorted(range(len(variables)), key=key)
    pos = {j: i + 1 for i, j in enumerate(order)}
    entries = tuple(
        RankEntry(v, tuple(int(x) for x in R[:, j]), float(mean_rank[j]), pos[j], float(pm.get(v, np.nan)))
        for j, v in enumerate(variables)
    )
    return RankTable(entries, "shapleyvic")


def rf_importance(
    cohort: Cohort,
    variables: Sequence[str],
    n_trees: int = 100,
    mtry: int | None = None,
    seed: int = 0,
    min_leaf: int = 10,
    max_depth: int | None = None,
    bootstrap: bool = True,
    threads: int = 1,
) -> dict[str, float]:
    """Total Gini impurity decrease per variable, summed over the trees of a forest.

    Per tree each split contributes ``(n_t * G_t - n_l * G_l - n_r * G_r) / n_root``;
    indicator columns of a categorical variable are summed into the variable.
    """
    if n_trees < 1:
        raise DataError("n_trees must be >= 1")
    design, y = encode(cohort, "train", variables)
    if design.shape[0] == 0:
        raise DataError("train partition is empty")
    k = design.shape[1]
    mtry = mtry or max(1, int(np.floor(np.sqrt(k))))
    forest = RandomForestClassifier(
        n_estimators=n_trees,
        criterion="gini",
        max_features=min(mtry, k),
        min_samples_leaf=min_leaf,
        max_depth=max_depth,
        bootstrap=bootstrap,
        random_state=seed,
        n_jobs=threads,
    )
    forest.fit(design.X, y)
    col_imp = np.zeros(k)
    for tree in forest.estimators_:
        col_imp += tree.tree_.compute_feature_importances(normalize=False)
    return {v: float(col_imp[list(design.groups[v])].sum()) for v in variables}


def rf_rank(
    cohort: Cohort,
    variables: Sequence[str],
    n_trees: int = 100,
    mtry: int | None = None,
    seed: int = 0,
    **kwargs,
) -> RankTable:
    imp = rf_importance(cohort, variables, n_trees, mtry, seed, **kwargs)
    ranks = tied_ranks([imp[v] for v in variables])
    order = sorted(range(len(variables)), key=lambda j: (-imp[variables[j]], j))
    pos = {j: i + 1 for i, j in enumerate(order)}
    entries = tuple(
        RankEntry(v, (int(ranks[j]),), float(ranks[j]), pos[j], imp[v]) for j, v in enumerate(variables)
    )
    return RankTable(entries, "random_forest")


RANK_FIELDS = ("variable", "mean_rank", "final_order", "method", "importance")


def write_rank_table(path: str | Path, table: RankTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RANK_FIELDS)
        for e in sorted(table.entries, key=lambda e: e.final_order):
            w.writerow([e.variable, repr(e.mean_rank), e.final_order, table.method, repr(e.importance)])


def read_rank_table(path: str | Path) -> RankTable:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: empty rank table")
    entries = tuple(
        RankEntry(r["variable"], (), float(r["mean_rank"]), int(r["final_order"]), float(r["importance"]))
        for r in rows
    )
    return RankTable(entries, rows[0]["method"])
