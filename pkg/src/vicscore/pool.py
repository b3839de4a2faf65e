"""Random-effects pooling of per-model importance values."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import DataError
from .sage import ImportanceRecord

SE_FLOOR = 1e-12
BAR_FILE = "importance_bar.csv"
VIOLIN_FILE = "importance_violin.csv"


@dataclass(frozen=True)
class PooledImportance:
    variable: str
    mean: float
    tau2: float
    se_mean: float
    pi_low: float
    pi_high: float
    significant: bool
    n_models: int = 0


def dersimonian_laird(values, ses, level: float = 0.95) -> tuple[float, float, float, float, float]:
    """DerSimonian-Laird pooled mean with a t-based (M - 2 df) prediction interval.

    Returns ``(mean, tau2, se_mean, pi_low, pi_high)``.
    """
    v = np.asarray(values, dtype=np.float64)
    s = np.maximum(np.asarray(ses, dtype=np.float64), SE_FLOOR)
    M = len(v)
    if M < 3:
        raise DataError(f"random-effects pooling needs at least 3 models, got {M}")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(s))):
        raise DataError("importance values and standard errors must be finite")
    w = 1.0 / s**2
    sw = w.sum()
    fixed = (w @ v) / sw
    q = float(w @ (v - fixed) ** 2)
    c = sw - (w @ w) / sw
    tau2 = max(0.0, (q - (M - 1)) / c) if c > 0 else 0.0
    wr = 1.0 / (s**2 + tau2)
    mean = float((wr @ v) / wr.sum())
    se_mean = float(wr.sum() ** -0.5)
    half = stats.t.ppf(0.5 + level / 2, M - 2) * np.sqrt(tau2 + se_mean**2)
    return mean, float(tau2), se_mean, float(mean - half), float(mean + half)


def pool_importance(records: Sequence[ImportanceRecord], variable: str | None = None) -> PooledImportance:
    """Pool one variable's records across models."""
    if not records:
        raise DataError("no records to pool")
    names = {r.variable for r in records}
    if len(names) != 1:
        raise DataError(f"pool_importance expects records of one variable, got {sorted(names)}")
    mean, tau2, se, lo, hi = dersimonian_laird([r.value for r in records], [r.se for r in records])
    return PooledImportance(variable or records[0].variable, mean, tau2, se, lo, hi, lo > 0, len(records))


def by_variable(records: Iterable[ImportanceRecord], order: Sequence[str] | None = None) -> dict[str, list[ImportanceRecord]]:
    out: dict[str, list[ImportanceRecord]] = {v: [] for v in order or ()}
    for r in records:
        out.setdefault(r.variable, []).append(r)
    for rs in out.values():
        rs.sort(key=lambda r: r.model_index)
    return out


def pool_all(records: Iterable[ImportanceRecord], order: Sequence[str] | None = None) -> list[PooledImportance]:
    return [pool_importance(rs) for rs in by_variable(records, order).values()]


def filter_significant(pooled: Sequence[PooledImportance]) -> tuple[list[PooledImportance], list[PooledImportance]]:
    kept = [p for p in pooled if p.significant]
    dropped = [p for p in pooled if not p.significant]
    if not kept:
        raise DataError(
            "no variable has a significant pooled importance; relax epsilon or provide more data"
        )
    return kept, dropped


def _num(x: float) -> str:
    return repr(float(x))


def export_plot_data(
    records: Sequence[ImportanceRecord],
    pooled: Sequence[PooledImportance],
    out_dir: str | Path,
    model_loss: Mapping[int, float] | None = None,
) -> tuple[Path, Path]:
    """Write the bar table (sorted by mean, descending) and the violin table."""
    rec_vars = {r.variable for r in records}
    pool_vars = {p.variable for p in pooled}
    if rec_vars != pool_vars:
        raise DataError("records and pooled importance cover different variables")
    out = Path(out_dir)
    if not out.is_dir():
        raise DataError(f"output directory {out} does not exist")
    position = {p.variable: i for i, p in enumerate(pooled)}
    bar = out / BAR_FILE
    try:
        with open(bar, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variable", "mean", "pi_low", "pi_high", "significant"])
            for p in sorted(pooled, key=lambda p: (-p.mean, position[p.variable])):
                w.writerow([p.variable, _num(p.mean), _num(p.pi_low), _num(p.pi_high), int(p.significant)])
        violin = out / VIOLIN_FILE
        with open(violin, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variable", "model_index", "value", "model_loss"])
            for r in sorted(records, key=lambda r: (position[r.variable], r.model_index)):
                loss = "" if model_loss is None else _num(model_loss[r.model_index])
                w.writerow([r.variable, r.model_index, _num(r.value), loss])
    except OSError as exc:
        raise DataError(f"cannot write plot data to {out}: {exc}") from exc
    return bar, violin
