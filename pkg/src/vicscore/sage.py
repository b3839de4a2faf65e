"""Shapley additive global importance (SAGE) for logistic models.

The coalition value is the mean logistic loss over evaluation rows when the
revealed variables take their true values and the hidden ones are replaced by
every row of a fixed background sample (marginal imputation). All columns of a
categorical variable act as one player.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numba
import numpy as np

from .errors import DataError
from .glm import ETA_CLAMP, CoefficientVector
from .tabular import Cohort, encode

MAX_EXACT_PLAYERS = 12
# beyond this |eta| the probability clamp is active
_SATURATE = ETA_CLAMP


@dataclass(frozen=True)
class ImportanceRecord:
    model_index: int
    variable: str
    value: float
    se: float
    absolute_applied: bool = False


@dataclass(frozen=True)
class SageConfig:
    eval_rows: int = 3500
    background_size: int = 128
    n_permutations: int = 256
    seed: int = 0
    # early stop once max se < convergence_tol * max |value|; 0 disables
    min_permutations: int = 32
    convergence_tol: float = 0.01

    def __post_init__(self):
        for f in ("eval_rows", "background_size", "n_permutations", "min_permutations"):
            if getattr(self, f) <= 0:
                raise DataError(f"SageConfig.{f} must be positive")
        if self.convergence_tol < 0:
            raise DataError("SageConfig.convergence_tol must be >= 0")


@numba.njit(nogil=True, cache=True)
def _imputed_loss(a, c, y):
    """mean_i mean_b loss(y_i, a_i + c_b) with probabilities clamped to [1e-12, 1 - 1e-12].

    Pairs with |a_i + c_b| >= _SATURATE hit the clamp and contribute a constant;
    the rest are summed as log(1 + e^a e^c) via logs of running products.
    """
    n_eval = a.shape[0]
    n_bg = c.shape[0]
    cs = np.sort(c)
    ec = np.exp(cs)
    csum = np.zeros(n_bg + 1)
    for b in range(n_bg):
        csum[b + 1] = csum[b] + cs[b]
    lo_loss = -math.log(1e-12)       # predicted p clamped at 1e-12
    hi_loss = -math.log1p(-1e-12)    # predicted p clamped at 1 - 1e-12
    total = 0.0
    for i in range(n_eval):
        ai = a[i]
        yi = y[i]
        lo = np.searchsorted(cs, -_SATURATE - ai, side="right")
        hi = np.searchsorted(cs, _SATURATE - ai, side="left")
        # z <= -T: p = 1e-12; z >= T: p = 1 - 1e-12
        s = lo * (yi * lo_loss + (1.0 - yi) * hi_loss)
        s += (n_bg - hi) * (yi * hi_loss + (1.0 - yi) * lo_loss)
        if hi > lo:
            u = math.exp(ai)
            prod = 1.0
            for b in range(lo, hi):
                prod *= 1.0 + u * ec[b]
                if prod > 1e250:
                    s += math.log(prod)
                    prod = 1.0
            s += math.log(prod)
            s -= yi * ((hi - lo) * ai + csum[hi] - csum[lo])
        total += s / n_bg
    return total / n_eval


@dataclass(frozen=True)
class SageData:
    """Evaluation rows, background rows and variable->column groups, shared across models."""

    X_eval: np.ndarray
    y_eval: np.ndarray
    X_bg: np.ndarray
    groups: tuple[np.ndarray, ...]
    variables: tuple[str, ...]

    @classmethod
    def from_cohort(
        cls,
        cohort: Cohort,
        variables: Sequence[str],
        config: SageConfig,
        eval_partition: str = "validation",
        background_partition: str = "train",
    ) -> "SageData":
        design, y = encode(cohort, eval_partition, variables)
        if design.shape[0] < config.eval_rows:
            raise DataError(
                f"partition {eval_partition!r} has {design.shape[0]} rows, fewer than eval_rows={config.eval_rows}"
            )
        bg_design, _ = encode(cohort, background_partition, variables)
        if bg_design.shape[0] < config.background_size:
            raise DataError(
                f"background sample of {config.background_size} requested but partition "
                f"{background_partition!r} has only {bg_design.shape[0]} rows"
            )
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))
        pick = np.sort(rng.choice(bg_design.shape[0], config.background_size, replace=False))
        return cls(
            np.ascontiguousarray(design.X[: config.eval_rows]),
            np.ascontiguousarray(y[: config.eval_rows], dtype=np.float64),
            np.ascontiguousarray(bg_design.X[pick]),
            tuple(design.group_index()),
            tuple(variables),
        )


class _Game:
    def __init__(self, model: CoefficientVector, data: SageData):
        if len(model.betas) != data.X_eval.shape[1]:
            raise DataError("model coefficients do not match the encoded variables")
        self.beta = np.asarray(model.betas, dtype=np.float64)
        self.b0 = model.intercept
        self.data = data
        self.cache: dict[bytes, float] = {}

    def value(self, revealed: np.ndarray) -> float:
        """Loss with columns flagged in ``revealed`` (0/1 float vector) known."""
        key = revealed.tobytes()
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        a = self.b0 + self.data.X_eval @ (self.beta * revealed)
        c = self.data.X_bg @ (self.beta * (1.0 - revealed))
        v = float(_imputed_loss(a, c, self.data.y_eval))
        if len(self.cache) < 4096:
            self.cache[key] = v
        return v

    def mask(self, players: Iterable[int]) -> np.ndarray:
        m = np.zeros(len(self.beta))
        for j in players:
            m[self.data.groups[j]] = 1.0
        return m


def _records(index, variables, values, ses):
    return [ImportanceRecord(index, v, float(x), float(s)) for v, x, s in zip(variables, values, ses)]


def sage_from_data(
    model: CoefficientVector, data: SageData, config: SageConfig, model_index: int = 0
) -> list[ImportanceRecord]:
    """Permutation-sampling estimate. ``se`` is the sd of contributions over sqrt(#permutations)."""
    game = _Game(model, data)
    d = len(data.groups)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7, model_index]))
    empty = game.value(game.mask(()))
    full = game.value(game.mask(range(d)))
    contrib = np.zeros((config.n_permutations, d))
    done = 0
    for t in range(config.n_permutations):
        perm = rng.permutation(d)
        revealed = np.zeros(len(game.beta))
        prev = empty
        for pos, j in enumerate(perm):
            revealed[data.groups[j]] = 1.0
            cur = full if pos == d - 1 else game.value(revealed)
            contrib[t, j] = prev - cur
            prev = cur
        done = t + 1
        if (
            config.convergence_tol > 0
            and done >= config.min_permutations
            and done % 16 == 0
            and done < config.n_permutations
        ):
            c = contrib[:done]
            se = c.std(axis=0, ddof=1) / math.sqrt(done)
            if se.max() < config.convergence_tol * np.abs(c.mean(axis=0)).max():
                break
    c = contrib[:done]
    ses = c.std(axis=0, ddof=1) / math.sqrt(done) if done > 1 else np.zeros(d)
    return _records(model_index, data.variables, c.mean(axis=0), ses)


def exact_from_data(model: CoefficientVector, data: SageData, model_index: int = 0) -> list[ImportanceRecord]:
    d = len(data.groups)
    if d > MAX_EXACT_PLAYERS:
        raise DataError(f"exact SAGE enumerates 2^d coalitions; d={d} exceeds {MAX_EXACT_PLAYERS}")
    game = _Game(model, data)
    v = {}
    for size in range(d + 1):
        for S in combinations(range(d), size):
            v[S] = game.value(game.mask(S))
    weight = [math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)]
    phi = np.zeros(d)
    for S, vs in v.items():
        if len(S) == d:
            continue
        for j in range(d):
            if j in S:
                continue
            T = tuple(sorted((*S, j)))
            phi[j] += weight[len(S)] * (vs - v[T])
    return _records(model_index, data.variables, phi, np.zeros(d))


def sage_estimate(
    model: CoefficientVector,
    cohort: Cohort,
    variables: Sequence[str],
    config: SageConfig = SageConfig(),
    model_index: int = 0,
) -> list[ImportanceRecord]:
    return sage_from_data(model, SageData.from_cohort(cohort, variables, config), config, model_index)


def sage_exact(
    model: CoefficientVector,
    cohort: Cohort,
    variables: Sequence[str],
    config: SageConfig = SageConfig(),
    model_index: int = 0,
) -> list[ImportanceRecord]:
    """Shapley values by enumerating all coalitions of the same game (test oracle)."""
    if len(variables) > MAX_EXACT_PLAYERS:
        raise DataError(f"exact SAGE supports at most {MAX_EXACT_PLAYERS} variables, got {len(variables)}")
    return exact_from_data(model, SageData.from_cohort(cohort, variables, config), model_index)


def sage_ensemble(
    models: Sequence[CoefficientVector], data: SageData, config: SageConfig, threads: int = 1
) -> list[list[ImportanceRecord]]:
    """Estimate every model in its own job; output order follows model order."""
    jobs = range(len(models))
    if threads <= 1:
        return [sage_from_data(models[i], data, config, i) for i in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda i: sage_from_data(models[i], data, config, i), jobs))


def apply_absolute(
    records: Iterable[ImportanceRecord], gvif_by_variable: Mapping[str, float], threshold: float = 2.0
) -> list[ImportanceRecord]:
    """Replace values by their magnitude for variables whose GVIF exceeds ``threshold``."""
    out = []
    for r in records:
        if r.variable not in gvif_by_variable:
            raise DataError(f"no GVIF for variable {r.variable!r}")
        if gvif_by_variable[r.variable] > threshold:
            r = replace(r, value=abs(r.value), absolute_applied=True)
        out.append(r)
    return out


RECORD_FIELDS = ("model_index", "variable", "value", "se", "absolute_applied")


def write_records(path: str | Path, records: Iterable[ImportanceRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.model_index, r.variable, repr(r.value), repr(r.se), int(r.absolute_applied)])


def read_records(path: str | Path) -> list[ImportanceRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        ImportanceRecord(int(r["model_index"]), r["variable"], float(r["value"]), float(r["se"]),
                         bool(int(r["absolute_applied"])))
        for r in rows
    ]
