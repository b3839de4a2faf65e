"""Sampling logistic models whose loss lies within a tolerance band above the optimum."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from . import glm
from .errors import DataError, NumericalError
from .glm import CoefficientVector

N_BANDS = 10
ACCEPT_LOW, ACCEPT_HIGH = 0.20, 0.60
MIN_ACCEPTANCE = 1e-3
POOL_FACTOR = 5  # accepted candidates gathered per requested model before thinning


@dataclass(frozen=True)
class ModelEnsemble:
    center: CoefficientVector
    models: tuple[CoefficientVector, ...]
    epsilon: float
    seed: int
    acceptance_rate: float
    scale: float = field(default=1.0)

    @property
    def bound(self) -> float:
        return (1 + self.epsilon) * self.center.loss

    @property
    def losses(self) -> np.ndarray:
        return np.array([m.loss for m in self.models])

    def __len__(self):
        return len(self.models)


def _stream(seed: int, tag: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag, index]))


def _batch_losses(thetas: np.ndarray, A: np.ndarray, y: np.ndarray, chunk: int = 128) -> np.ndarray:
    out = np.empty(len(thetas))
    yc = y[:, None]
    for s in range(0, len(thetas), chunk):
        out[s:s + chunk] = glm.pointwise_loss(A @ thetas[s:s + chunk].T, yc).mean(axis=0)
    return out


class _Sampler:
    def __init__(self, center, A, y, chol, seed):
        self.center = center
        self.theta = center.theta
        self.A, self.y, self.chol, self.seed = A, y, chol, seed

    def draw(self, scale: float, tag: int, index: int, size: int):
        z = _stream(self.seed, tag, index).standard_normal((size, len(self.theta)))
        # rows ~ N(theta, scale^2 * Sigma) with Sigma = L L^T
        thetas = self.theta + scale * z @ self.chol.T
        return thetas, _batch_losses(thetas, self.A, self.y)


def _calibrate(sampler: _Sampler, bound: float, batch: int, max_steps: int = 60) -> float:
    """Doubling/halving search for a scale with raw acceptance in [20%, 60%]."""
    scale, lo, hi = 1.0, None, None
    for step in range(max_steps):
        _, losses = sampler.draw(scale, 1, step, batch)
        rate = float(np.mean(losses <= bound))
        if ACCEPT_LOW <= rate <= ACCEPT_HIGH:
            return scale
        if rate > ACCEPT_HIGH:
            lo = scale
            scale = scale * 2 if hi is None else np.sqrt(scale * hi)
        else:
            hi = scale
            scale = scale / 2 if lo is None else np.sqrt(lo * scale)
    raise NumericalError("could not calibrate the sampling scale to a 20-60% acceptance rate")


def _stratified_pick(losses: np.ndarray, lo: float, hi: float, m: int) -> np.ndarray:
    """Round-robin over equal-width loss sub-bands, draw order within each band."""
    width = (hi - lo) / N_BANDS
    band = np.clip(((losses - lo) / width).astype(np.int64) if width > 0 else 0, 0, N_BANDS - 1)
    queues = [list(np.flatnonzero(band == b)) for b in range(N_BANDS)]
    picked: list[int] = []
    depth = 0
    while len(picked) < m:
        progressed = False
        for q in queues:
            if depth < len(q):
                picked.append(q[depth])
                progressed = True
                if len(picked) == m:
                    break
        if not progressed:
            break
        depth += 1
    return np.sort(np.asarray(picked, dtype=np.int64))


def sample_ensemble(
    center: CoefficientVector,
    design,
    outcome,
    m: int = 350,
    epsilon: float = 0.05,
    seed: int = 0,
    scale: float | None = None,
) -> ModelEnsemble:
    """Draw ``m`` models with loss <= (1 + epsilon) * center.loss.

    Candidates come from N(center, c^2 * inverse observed information). ``c`` is
    calibrated unless ``scale`` is given. Accepted candidates are pooled and then
    thinned across 10 equal-width loss sub-bands so members spread over the band.
    """
    if m < 3:
        raise DataError("ensemble size m must be >= 3")
    if not epsilon > 0:
        raise DataError("epsilon must be > 0")
    X = glm._matrix(design)
    y = np.asarray(outcome, dtype=np.float64)
    A = np.column_stack([np.ones(len(y)), X])
    if A.shape[1] != len(center.theta):
        raise DataError("center model does not match the design")
    info = glm.observed_information(center, X)
    try:
        cov = linalg.cho_solve(linalg.cho_factor(info), np.eye(len(info)))
        chol = linalg.cholesky(0.5 * (cov + cov.T), lower=True)
    except linalg.LinAlgError:
        raise NumericalError("observed information of the center model is not positive definite") from None
    sampler = _Sampler(center, A, y, chol, seed)
    bound = (1 + epsilon) * center.loss
    batch = max(2000, 10 * m)
    if scale is None:
        scale = _calibrate(sampler, bound, min(batch, 1000))

    pool_target = POOL_FACTOR * m
    cap = 1000 * m
    kept_thetas, kept_losses = [], []
    drawn = accepted = 0
    index = 0
    while accepted < pool_target:
        if drawn >= cap:
            break
        thetas, losses = sampler.draw(scale, 2, index, batch)
        index += 1
        # margin keeps membership robust to re-evaluation rounding
        ok = losses <= bound * (1 - 1e-12)
        drawn += batch
        accepted += int(ok.sum())
        kept_thetas.append(thetas[ok])
        kept_losses.append(losses[ok])
        if drawn >= 10 * batch and accepted / drawn < MIN_ACCEPTANCE:
            break
    rate = accepted / drawn
    if rate < MIN_ACCEPTANCE or accepted < m:
        raise NumericalError(
            f"near-optimal sampling accepted {accepted} of {drawn} candidates "
            f"(rate {rate:.2%}); try a larger epsilon"
        )
    thetas = np.concatenate(kept_thetas)
    losses = np.concatenate(kept_losses)
    pick = _stratified_pick(losses, center.loss, bound, m)
    models = tuple(CoefficientVector(t[0], t[1:], l, True) for t, l in zip(thetas[pick], losses[pick]))
    return ModelEnsemble(center, models, float(epsilon), int(seed), float(rate), float(scale))


def write_ensemble(ensemble: ModelEnsemble, path: str | Path, columns: list[str] | None = None) -> None:
    """One model per row: loss, intercept, betas. The center is not written."""
    k = len(ensemble.center.betas)
    header = ["loss", "intercept", *(columns or [f"b{i + 1}" for i in range(k)])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for mdl in ensemble.models:
            w.writerow([repr(mdl.loss), repr(mdl.intercept), *(repr(float(b)) for b in mdl.betas)])


def read_ensemble(path: str | Path) -> list[CoefficientVector]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return [CoefficientVector(float(r[1]), np.array(r[2:], dtype=float), float(r[0])) for r in rows[1:]]
