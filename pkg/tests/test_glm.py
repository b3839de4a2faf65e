import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar
from scipy.stats import norm

from vicscore import glm, tabular
from vicscore.errors import DataError, NumericalError
from vicscore.glm import CoefficientVector
from conftest import make_cohort


def _brute_force_minimize(X, y, sweeps=200):
    """Cyclic coordinate descent with a bounded scalar search per coordinate."""
    A = np.column_stack([np.ones(len(y)), X])

    def loss(t):
        eta = A @ t
        return np.mean(np.logaddexp(0, eta) - y * eta)

    theta = np.zeros(A.shape[1])
    for _ in range(sweeps):
        before = theta.copy()
        for j in range(len(theta)):
            def f(v, j=j):
                t = theta.copy()
                t[j] = v
                return loss(t)
            theta[j] = minimize_scalar(f, bounds=(theta[j] - 5, theta[j] + 5), method="bounded",
                                       options={"xatol": 1e-12}).x
        if np.max(np.abs(theta - before)) < 1e-11:
            break
    return theta


def test_fit_matches_coordinate_descent_oracle():
    rng = np.random.default_rng(50)
    X = rng.normal(size=(50, 2))
    y = (rng.random(50) < 1 / (1 + np.exp(-(0.3 + X @ [1.0, -0.7])))).astype(float)
    fit = glm.fit_logistic(X, y)
    oracle = _brute_force_minimize(X, y)
    assert fit.converged
    np.testing.assert_allclose(fit.theta, oracle, atol=1e-4)


def test_fit_intercept_only_optimum():
    rng = np.random.default_rng(1)
    n = 400
    y = np.zeros(n)
    y[:100] = 1
    # predictors orthogonal to y and to the constant: exact zero-beta optimum
    x = np.tile([1.0, -1.0], n // 2)
    X = np.column_stack([x, np.roll(x, 1) * np.repeat([1, 1, -1, -1], n // 4)])
    fit = glm.fit_logistic(X, y)
    assert fit.intercept == pytest.approx(np.log(0.25 / 0.75), abs=1e-8)
    assert np.all(np.abs(fit.betas) < 1e-6)


def test_fit_symmetric_data_zero_intercept():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(60, 2))
    y = (rng.random(60) < 0.4).astype(float)
    X = np.vstack([x, -x])
    Y = np.concatenate([y, 1 - y])
    assert abs(glm.fit_logistic(X, Y).intercept) < 1e-8


def test_fit_separation_falls_back_to_ridge():
    X = np.array([[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]])
    y = np.array([0, 0, 0, 1, 1, 1.0])
    with pytest.warns(glm.SeparationWarning):
        fit = glm.fit_logistic(X, y)
    assert not fit.converged
    assert np.all(np.isfinite(fit.theta))
    assert fit.betas[0] > 0


def test_fit_preconditions():
    X = np.zeros((4, 1))
    with pytest.raises(DataError, match="2 rows of each"):
        glm.fit_logistic(X, [1, 0, 0, 0])
    X = np.array([[1.0], [np.nan], [0.0], [2.0]])
    with pytest.raises(DataError, match="missing"):
        glm.fit_logistic(X, [1, 1, 0, 0])


def test_converged_fit_has_small_gradient_and_is_a_minimum():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 4))
    y = (rng.random(300) < 1 / (1 + np.exp(-X @ [0.5, -1, 0.2, 0]))).astype(float)
    fit = glm.fit_logistic(X, y)
    assert fit.converged
    assert np.max(np.abs(glm.gradient(fit, X, y))) < 1e-8
    base = glm.logistic_loss(fit, X, y)
    assert base == pytest.approx(fit.loss, abs=1e-14)
    for _ in range(100):
        t = fit.theta + rng.normal(scale=0.05, size=5)
        other = CoefficientVector(t[0], t[1:], 0.0)
        assert base <= glm.logistic_loss(other, X, y) + 1e-8


def test_observed_information_matches_finite_difference():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(80, 2))
    y = (rng.random(80) < 0.5).astype(float)
    m = CoefficientVector(0.1, [0.3, -0.2], 0.0)
    H = glm.observed_information(m, X)
    h = 1e-6
    num = np.zeros((3, 3))
    for j in range(3):
        t = m.theta.copy()
        t[j] += h
        up = glm.gradient(CoefficientVector(t[0], t[1:], 0.0), X, y)
        t[j] -= 2 * h
        dn = glm.gradient(CoefficientVector(t[0], t[1:], 0.0), X, y)
        num[:, j] = (up - dn) / (2 * h) * len(y)
    np.testing.assert_allclose(H, num, rtol=1e-5, atol=1e-6)


def test_loss_zero_coefficients_is_ln2():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(30, 3))
    y = rng.integers(0, 2, 30)
    m = CoefficientVector(0.0, np.zeros(3), 0.0)
    assert glm.logistic_loss(m, X, y) == pytest.approx(np.log(2), abs=1e-15)


def test_loss_perfect_fit_below_1e10():
    X = np.array([[1.0], [-1.0], [2.0], [-2.0]])
    y = np.array([1, 0, 1, 0])
    m = CoefficientVector(0.0, [1e3], 0.0)
    assert glm.logistic_loss(m, X, y) < 1e-10


def test_loss_hand_case():
    logit = lambda p: np.log(p / (1 - p))
    X = np.array([[logit(0.8)], [logit(0.5)], [logit(0.2)]])
    m = CoefficientVector(0.0, [1.0], 0.0)
    expected = (-np.log(0.8) - np.log(0.5) - np.log(0.8)) / 3
    # the listed 0.379717 is off by 9e-5; the formula itself gives 0.3798114
    assert expected == pytest.approx(0.379717, abs=1e-4)
    assert glm.logistic_loss(m, X, [1, 0, 0]) == pytest.approx(expected, abs=1e-12)


def test_loss_clamps_probabilities():
    # a confidently wrong prediction costs exactly -ln(1e-12)
    m = CoefficientVector(0.0, [1e4], 0.0)
    assert glm.logistic_loss(m, [[1.0]], [0]) == pytest.approx(-np.log(1e-12), rel=1e-9)


def test_loss_shape_mismatch():
    with pytest.raises(DataError):
        glm.logistic_loss(CoefficientVector(0, [1.0], 0), np.ones((3, 1)), [0, 1])
    with pytest.raises(DataError):
        glm.logistic_loss(CoefficientVector(0, [1.0, 2.0], 0), np.ones((2, 1)), [0, 1])


def _pairwise_auc(s, y):
    pos = [a for a, t in zip(s, y) if t == 1]
    neg = [a for a, t in zip(s, y) if t == 0]
    total = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return total / (len(pos) * len(neg))


def test_auc_trivial_cases():
    assert glm.auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert glm.auc([3, 3, 3, 3], [0, 1, 0, 1]) == 0.5


def test_auc_ten_row_mixed_ties():
    s = [1, 2, 2, 3, 3, 3, 4, 5, 5, 6]
    y = [0, 1, 0, 1, 0, 0, 1, 0, 1, 1]
    assert glm.auc(s, y) == pytest.approx(_pairwise_auc(s, y), abs=1e-15)


def test_auc_single_class_error():
    with pytest.raises(DataError, match="both outcome classes"):
        glm.auc([1, 2], [1, 1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=40))
def test_auc_matches_pairwise_and_is_monotone_invariant(rows):
    s = np.array([r[0] for r in rows], dtype=float)
    y = np.array([int(r[1]) for r in rows])
    if y.min() == y.max():
        return
    a = glm.auc(s, y)
    assert a == pytest.approx(_pairwise_auc(s, y), abs=1e-12)
    assert glm.auc(np.exp(s) * 3 + 1, y) == pytest.approx(a, abs=1e-12)


def test_auc_ci_perfect_and_deterministic():
    s = np.arange(40.0)
    y = (s >= 20).astype(int)
    r = glm.auc_ci(s, y, n_boot=200, seed=1)
    assert r.auc == 1.0 and r.ci_high == 1.0
    rng = np.random.default_rng(0)
    s = rng.normal(size=100)
    y = rng.integers(0, 2, 100)
    assert glm.auc_ci(s, y, 300, 9) == glm.auc_ci(s, y, 300, 9)
    r = glm.auc_ci(s, y, 300, 9)
    assert r.ci_low <= r.auc <= r.ci_high and r.n_boot == 300


def test_auc_ci_rejects_small_n_boot():
    with pytest.raises(DataError):
        glm.auc_ci([0, 1], [0, 1], n_boot=50)


def test_auc_ci_single_class_resamples_error():
    # two rows: half of all resamples are single-class, so ten failed redraws
    # in a row turn up within a few thousand replicates
    with pytest.raises(NumericalError, match="single outcome class"):
        glm.auc_ci([0.0, 1.0], [0, 1], n_boot=20000, seed=0)


@pytest.mark.slow
def test_auc_ci_coverage_monte_carlo():
    # positives shifted by d under unit-variance normals: AUC = Phi(d / sqrt 2)
    d = 1.0
    true_auc = norm.cdf(d / np.sqrt(2))
    covered = 0
    for rep in range(100):
        rng = np.random.default_rng(1000 + rep)
        y = (rng.random(500) < 0.4).astype(int)
        s = rng.normal(size=500) + d * y
        r = glm.auc_ci(s, y, n_boot=500, seed=rep)
        covered += r.ci_low <= true_auc <= r.ci_high
    assert covered >= 90


def _design(X, names=None):
    names = names or [f"x{j}" for j in range(X.shape[1])]
    c = make_cohort({n: X[:, j] for j, n in enumerate(names)}, np.arange(len(X)) % 2)
    return tabular.encode(c, None)[0]


def test_gvif_orthogonal():
    x1 = np.array([1.0, -1, 1, -1, 1, -1, 1, -1])
    x2 = np.array([1.0, 1, -1, -1, 1, 1, -1, -1])
    g = glm.gvif(_design(np.column_stack([x1, x2])))
    assert g["x0"].gvif == pytest.approx(1.0, abs=1e-9)
    assert g["x1"].gvif == pytest.approx(1.0, abs=1e-9)


def test_gvif_equals_classical_vif_auxiliary_regression():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(200, 4))
    X[:, 1] += 0.7 * X[:, 0]
    X[:, 3] += 0.5 * X[:, 1] - 0.4 * X[:, 2]
    g = glm.gvif(_design(X))
    for j in range(4):
        others = np.column_stack([np.ones(200), np.delete(X, j, axis=1)])
        coef = np.linalg.lstsq(others, X[:, j], rcond=None)[0]
        resid = X[:, j] - others @ coef
        r2 = 1 - resid @ resid / np.sum((X[:, j] - X[:, j].mean()) ** 2)
        assert g[f"x{j}"].gvif == pytest.approx(1 / (1 - r2), rel=1e-9)
        assert g[f"x{j}"].adjusted == pytest.approx(np.sqrt(1 / (1 - r2)), rel=1e-9)


def test_gvif_categorical_block():
    rng = np.random.default_rng(7)
    cats = rng.choice(["a", "b", "c"], 300)
    x = (cats == "b") * 1.0 + rng.normal(scale=0.5, size=300)
    c = make_cohort({"k": list(cats), "x": x, "z": rng.normal(size=300)}, np.arange(300) % 2,
                    {"k": ["a", "b", "c"]})
    D, _ = tabular.encode(c, None)
    g = glm.gvif(D)
    assert g["k"].df == 2
    assert g["k"].adjusted == pytest.approx(g["k"].gvif ** 0.25)
    # block determinant formula computed directly
    R = np.corrcoef(D.X, rowvar=False)
    idx = [0, 1]
    rest = [2, 3]
    oracle = np.linalg.det(R[np.ix_(idx, idx)]) * np.linalg.det(R[np.ix_(rest, rest)]) / np.linalg.det(R)
    assert g["k"].gvif == pytest.approx(oracle, rel=1e-9)
    assert g["k"].gvif > 1.2


def test_gvif_near_copy_exceeds_two():
    rng = np.random.default_rng(8)
    x1 = rng.normal(size=500)
    X = np.column_stack([x1, x1 + rng.normal(scale=0.05, size=500), rng.normal(size=500)])
    g = glm.gvif(_design(X))
    assert g["x0"].gvif > 2 and g["x1"].gvif > 2 and g["x2"].gvif < 2


def test_gvif_exact_collinearity_names_pair():
    rng = np.random.default_rng(9)
    a = rng.normal(size=50)
    b = rng.normal(size=50)
    X = np.column_stack([a, b, 2 * a - 3])
    with pytest.raises(NumericalError, match=r"'x0' and 'x2'"):
        glm.gvif(_design(X))
    X = np.column_stack([a, b, rng.normal(size=50), a + b])
    with pytest.raises(NumericalError, match=r"'x3' and"):
        glm.gvif(_design(X))


def test_gvif_preconditions():
    with pytest.raises(DataError, match="two variables"):
        glm.gvif(_design(np.random.default_rng(0).normal(size=(10, 1))))
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    with pytest.raises(DataError, match="constant"):
        glm.gvif(_design(X))
