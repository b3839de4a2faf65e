"""Logistic regression (IRLS), logistic loss, AUC and collinearity diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg
from scipy.special import expit
from scipy.stats import rankdata

from .errors import DataError, NumericalError
from .tabular import DesignMatrix

PROB_CLAMP = 1e-12
GRAD_TOL = 1e-8
RIDGE_PER_ROW = 1e-6
# |linear predictor| beyond this at a "converged" solution means separation
_SEPARATION_ETA = 30.0


class SeparationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CoefficientVector:
    intercept: float
    betas: np.ndarray
    loss: float
    converged: bool = True

    def __post_init__(self):
        b = np.array(self.betas, dtype=np.float64, copy=True)
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "loss", float(self.loss))

    @property
    def theta(self) -> np.ndarray:
        """Intercept followed by betas."""
        return np.concatenate([[self.intercept], self.betas])

    def linear_predictor(self, X) -> np.ndarray:
        X = _matrix(X)
        if X.shape[1] != len(self.betas):
            raise DataError(f"design has {X.shape[1]} columns, model has {len(self.betas)} coefficients")
        return self.intercept + X @ self.betas

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.linear_predictor(X))


def _matrix(X) -> np.ndarray:
    return X.X if isinstance(X, DesignMatrix) else np.asarray(X, dtype=np.float64)


_sigmoid = expit
# clamping p to [1e-12, 1 - 1e-12] is clamping the logit to +-ETA_CLAMP
ETA_CLAMP = float(np.log((1 - PROB_CLAMP) / PROB_CLAMP))


def pointwise_loss(eta, y) -> np.ndarray:
    z = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
    return np.logaddexp(0.0, z) - y * z


def loss_from_eta(eta: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(pointwise_loss(eta, y)))


def logistic_loss(model: CoefficientVector, design, outcome) -> float:
    """Mean logistic loss with probabilities clamped to [1e-12, 1 - 1e-12]."""
    y = np.asarray(outcome, dtype=np.float64)
    X = _matrix(design)
    if X.shape[0] != len(y):
        raise DataError(f"design has {X.shape[0]} rows, outcome has {len(y)}")
    return loss_from_eta(model.linear_predictor(X), y)


def _smooth_loss(theta, A, y, lam):
    eta = A @ theta
    val = np.mean(np.logaddexp(0.0, eta) - y * eta)
    return val + 0.5 * lam * float(theta[1:] @ theta[1:])


def _newton(A, y, theta, lam, max_iter):
    n, k = A.shape
    pen = np.full(k, lam)
    pen[0] = 0.0
    f = _smooth_loss(theta, A, y, lam)
    for it in range(max_iter):
        p = _sigmoid(A @ theta)
        g = A.T @ (p - y) / n + pen * theta
        if np.max(np.abs(g)) < GRAD_TOL:
            return theta, True, it
        w = p * (1 - p)
        H = (A.T * w) @ A / n + np.diag(pen)
        try:
            step = linalg.cho_solve(linalg.cho_factor(H), g)
        except linalg.LinAlgError:
            return theta, False, it
        if not np.all(np.isfinite(step)):
            return theta, False, it
        t = 1.0
        while True:
            cand = theta - t * step
            fc = _smooth_loss(cand, A, y, lam)
            if fc <= f + 1e-15 * abs(f) or t < 1e-10:
                break
            t *= 0.5
        if t < 1e-10:
            # no descent available: report the gradient status as is
            return theta, bool(np.max(np.abs(g)) < GRAD_TOL), it
        theta, f = cand, fc
    p = _sigmoid(A @ theta)
    g = A.T @ (p - y) / n + pen * theta
    return theta, bool(np.max(np.abs(g)) < GRAD_TOL), max_iter


def fit_logistic(design, outcome, max_iter: int = 100) -> CoefficientVector:
    """Minimise mean logistic loss by IRLS with step-halving.

    When the Hessian is not positive definite, Newton fails to converge, or the
    optimum sits at an effectively infinite linear predictor (separation), the
    fit is redone with a ridge penalty of 1e-6 * n on the summed loss; the
    returned vector then has ``converged=False``.
    """
    X = _matrix(design)
    y = np.asarray(outcome, dtype=np.float64)
    n = len(y)
    if X.shape[0] != n:
        raise DataError(f"design has {X.shape[0]} rows, outcome has {n}")
    n1 = int(y.sum())
    if n1 < 2 or n - n1 < 2:
        raise DataError("fit_logistic needs at least 2 rows of each outcome class")
    if not np.all(np.isfinite(X)):
        raise DataError("design contains missing or non-finite cells")
    A = np.column_stack([np.ones(n), X])
    theta0 = np.zeros(A.shape[1])
    theta0[0] = np.log(n1 / (n - n1))
    theta, ok, _ = _newton(A, y, theta0.copy(), 0.0, max_iter)
    if ok and np.max(np.abs(A @ theta)) > _SEPARATION_ETA:
        ok = False
    if not ok:
        warnings.warn(
            "logistic fit did not converge (separation or singular information); "
            "refitting with a small ridge penalty",
            SeparationWarning,
            stacklevel=2,
        )
        theta, _, _ = _newton(A, y, theta0.copy(), RIDGE_PER_ROW, max_iter)
    return CoefficientVector(theta[0], theta[1:], loss_from_eta(A @ theta, y), ok)


def gradient(model: CoefficientVector, design, outcome) -> np.ndarray:
    """Gradient of the mean (unpenalised) logistic loss w.r.t. (intercept, betas)."""
    X = _matrix(design)
    y = np.asarray(outcome, dtype=np.float64)
    r = _sigmoid(model.linear_predictor(X)) - y
    return np.concatenate([[r.mean()], X.T @ r / len(y)])


def observed_information(model: CoefficientVector, design) -> np.ndarray:
    """Hessian of the summed logistic loss (intercept first)."""
    X = _matrix(design)
    A = np.column_stack([np.ones(len(X)), X])
    p = _sigmoid(A @ model.theta)
    return (A.T * (p * (1 - p))) @ A


# --------------------------------------------------------------------------
# discrimination
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AucResult:
    auc: float
    ci_low: float
    ci_high: float
    n_boot: int


def _check_binary(outcome):
    y = np.asarray(outcome)
    if y.ndim != 1:
        raise DataError("outcome must be a vector")
    n1 = int((y == 1).sum())
    if n1 == 0 or n1 == len(y):
        raise DataError("AUC needs both outcome classes")
    return y == 1


def auc(scores, outcome) -> float:
    """Exact Mann-Whitney AUC; tied scores count one half."""
    s = np.asarray(scores, dtype=np.float64)
    pos = _check_binary(outcome)
    if len(s) != len(pos):
        raise DataError("scores and outcome differ in length")
    n1 = int(pos.sum())
    n0 = len(pos) - n1
    r = rankdata(s)
    return float((r[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def auc_ci(scores, outcome, n_boot: int = 1000, seed: int = 0, level: float = 0.95) -> AucResult:
    """Percentile-bootstrap interval for the AUC, deterministic in ``seed``.

    Resamples lacking one of the classes are redrawn up to 10 times.
    """
    if n_boot < 100:
        raise DataError("auc_ci needs n_boot >= 100")
    s = np.asarray(scores, dtype=np.float64)
    pos = _check_binary(outcome)
    point = auc(s, pos)
    n = len(s)
    rng = np.random.default_rng(seed)
    stats = np.empty(n_boot)
    for b in range(n_boot):
        for _ in range(10):
            idx = rng.integers(0, n, n)
            yb = pos[idx]
            k = int(yb.sum())
            if 0 < k < n:
                break
        else:
            raise NumericalError("bootstrap resamples repeatedly contained a single outcome class")
        r = rankdata(s[idx])
        stats[b] = (r[yb].sum() - k * (k + 1) / 2.0) / (k * (n - k))
    alpha = (1 - level) / 2
    lo, hi = np.percentile(stats, [100 * alpha, 100 * (1 - alpha)])
    return AucResult(point, float(min(lo, point)), float(max(hi, point)), n_boot)


# --------------------------------------------------------------------------
# collinearity
# --------------------------------------------------------------------------

class Gvif(NamedTuple):
    gvif: float
    df: int
    adjusted: float  # GVIF ** (1 / (2 * df))


def gvif(design: DesignMatrix) -> dict[str, Gvif]:
    """Generalised variance-inflation factor per variable.

    ``det(R_vv) * det(R_rest) / det(R)`` over the predictor correlation matrix,
    with ``R_vv`` the block of the variable's own columns.
    """
    X = design.X
    if len(design.variables) < 2:
        raise DataError("gvif needs at least two variables")
    sd = X.std(axis=0)
    if np.any(sd == 0):
        j = int(np.flatnonzero(sd == 0)[0])
        raise DataError(f"column {design.columns[j]!r} is constant")
    R = np.corrcoef(X, rowvar=False)
    R = np.atleast_2d(R)
    sign, logdet = np.linalg.slogdet(R)
    if sign <= 0 or logdet < np.log(1e-13):
        raise NumericalError(_collinearity_message(design, R))
    out = {}
    k = R.shape[0]
    for v in design.variables:
        idx = np.asarray(design.groups[v])
        rest = np.setdiff1d(np.arange(k), idx)
        _, ld_v = np.linalg.slogdet(R[np.ix_(idx, idx)])
        ld_r = np.linalg.slogdet(R[np.ix_(rest, rest)])[1] if len(rest) else 0.0
        g = float(np.exp(ld_v + ld_r - logdet))
        out[v] = Gvif(g, len(idx), g ** (1.0 / (2 * len(idx))))
    return out


def _collinearity_message(design: DesignMatrix, R: np.ndarray) -> str:
    cols = design.column_map
    k = R.shape[0]
    for i in range(k):
        for j in range(i + 1, k):
            if abs(R[i, j]) > 1 - 1e-10 and cols[i][0] != cols[j][0]:
                return f"singular correlation matrix: variables {cols[i][0]!r} and {cols[j][0]!r} are exactly collinear"
    # no offending pair: regress the first dependent column on its predecessors
    for j in range(1, k):
        if np.linalg.matrix_rank(R[: j + 1, : j + 1], tol=1e-10) <= j:
            coef = np.linalg.lstsq(R[:j, :j], R[:j, j], rcond=None)[0]
            partner = cols[int(np.argmax(np.abs(coef)))][0]
            return (
                f"singular correlation matrix: variables {cols[j][0]!r} and {partner!r} "
                "are exactly collinear (possibly with others)"
            )
    return "singular correlation matrix"
