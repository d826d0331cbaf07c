import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import expit, logit

from sdrg.learners import (
    EMPTY,
    GBM_MEDIUM,
    INTERCEPT,
    LOGISTIC,
    SATURATED,
    FitError,
    LearnerSpec,
    Problem,
    cv_select,
    fit_boosted_stumps,
    fit_convex_ensemble,
    fit_learner,
    fit_logistic,
    format_spec,
    make_partition,
    parse_spec,
    score_residual,
    super_learner,
)


def newton_oracle(Z, y, w, offset, iters=60):
    """Plain Newton-Raphson on the weighted cross-entropy (no safeguards)."""
    beta = np.zeros(Z.shape[1])
    for _ in range(iters):
        p = expit(offset + Z @ beta)
        g = Z.T @ (w * (y - p))
        H = (Z * (w * p * (1 - p))[:, None]).T @ Z
        beta = beta + np.linalg.solve(H, g)
    return beta


def synthetic(n=200, seed=0, frac=False):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    p = expit(0.3 + X @ np.array([0.8, -0.5]))
    y = rng.random(n) if frac else (rng.random(n) < p).astype(float)
    w = rng.uniform(0.5, 2.0, n)
    off = rng.normal(scale=0.3, size=n)
    return X, y, w, off


# -- logistic regression -----------------------------------------------------

def test_intercept_only_mle():
    fit = fit_logistic(np.zeros((4, 0)), [0, 1, 1, 1])
    assert fit.intercept == pytest.approx(logit(0.75), abs=1e-10)


@pytest.mark.parametrize("frac", [False, True])
def test_irls_matches_newton_oracle(frac):
    X, y, w, off = synthetic(frac=frac)
    fit = fit_logistic(X, y, w, off)
    beta = newton_oracle(np.column_stack([np.ones(len(y)), X]), y, w, off)
    assert np.max(np.abs(np.r_[fit.intercept, fit.coef] - beta)) < 1e-6


def test_irls_matches_generic_optimiser():
    X, y, w, off = synthetic(seed=3)
    Z = np.column_stack([np.ones(len(y)), X])

    def f(b):
        eta = off + Z @ b
        return np.sum(w * (np.logaddexp(0, eta) - y * eta)), Z.T @ (w * (expit(eta) - y))

    ref = minimize(f, np.zeros(3), jac=True, method="BFGS", options={"gtol": 1e-11}).x
    fit = fit_logistic(X, y, w, off)
    assert np.max(np.abs(np.r_[fit.intercept, fit.coef] - ref)) < 1e-5


def test_irls_score_residual():
    X, y, w, off = synthetic(seed=5)
    fit = fit_logistic(X, y, w, off)
    assert np.max(np.abs(score_residual(fit, X, y, w, off))) <= 1e-8


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.integers(0, 1000))
def test_offset_invariance(c, seed):
    X, y, w, off = synthetic(n=80, seed=seed)
    a = fit_logistic(X, y, w, off)
    b = fit_logistic(X, y, w, off + c)
    assert b.intercept == pytest.approx(a.intercept - c, abs=1e-7)
    assert np.max(np.abs(a.predict(X, off) - b.predict(X, off + c))) < 1e-9


def test_zero_weights_error():
    with pytest.raises(FitError, match="weights"):
        fit_logistic(np.ones((3, 1)), [0, 1, 0], np.zeros(3))


def test_separation_is_stabilised():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    fit = fit_logistic(X, [0, 0, 1, 1])
    assert fit.stabilized
    assert np.all((fit.predict(X) > 0) & (fit.predict(X) < 1))


def test_duplicate_columns_stabilised():
    X, y, w, off = synthetic(n=60)
    X2 = np.column_stack([X[:, 0], X[:, 0]])
    fit = fit_logistic(X2, y, w, off)
    assert fit.stabilized and np.all(np.isfinite(fit.coef))


def test_no_intercept_fit():
    X, y, w, off = synthetic(seed=2)
    fit = fit_logistic(X[:, :1], y, w, off, fit_intercept=False)
    beta = newton_oracle(X[:, :1], y, w, off)
    assert fit.intercept == 0.0
    assert fit.coef[0] == pytest.approx(beta[0], abs=1e-8)


def test_unbounded_responses_need_flag():
    X, _, w, off = synthetic(n=50)
    y = np.linspace(-0.5, 1.5, 50)
    with pytest.raises(FitError):
        fit_logistic(X, y, w, off)
    fit = fit_logistic(X, y, w, off, allow_unbounded=True)
    assert np.max(np.abs(score_residual(fit, X, y, w, off))) < 1e-8


# -- learner families ---------------------------------------------------------

def test_empty_learner_keeps_offset():
    off = np.array([-1.0, 0.0, 2.0])
    fit = fit_learner(EMPTY, np.zeros((3, 1)), [0, 1, 1], None, off)
    assert np.array_equal(fit.predict(np.zeros((3, 1)), off), expit(off))


def test_spec_text_round_trip():
    for spec in (LOGISTIC, EMPTY, GBM_MEDIUM):
        assert parse_spec(format_spec(spec)) == spec


def test_spec_validation():
    with pytest.raises(ValueError):
        LearnerSpec("empty", {"rounds": 3})
    with pytest.raises(ValueError):
        LearnerSpec("boosted-stumps", {"rounds": -1})
    with pytest.raises(ValueError):
        LearnerSpec("boosted-stumps", {"max_depth": 4})


def test_logistic_predictions_in_unit_interval():
    X, y, w, off = synthetic()
    for spec in (LOGISTIC, INTERCEPT, GBM_MEDIUM):
        p = fit_learner(spec, X, y, w, off).predict(X, off)
        assert np.all((p > 0) & (p < 1))


# -- boosting ----------------------------------------------------------------

def test_boosting_zero_rounds_is_weighted_mean():
    X, _, w, _ = synthetic()
    y = np.linspace(-2, 3, len(w))
    fit = fit_boosted_stumps(X, y, w, rounds=0)
    assert np.allclose(fit.predict(X), np.average(y, weights=w))


def test_boosting_constant_response():
    X, _, w, _ = synthetic()
    fit = fit_boosted_stumps(X, np.full(len(w), 0.37), w, rounds=30)
    assert np.allclose(fit.predict(X), 0.37, atol=1e-12)


def test_boosting_fits_single_split():
    rng = np.random.default_rng(1)
    x = rng.integers(0, 2, 300).astype(float)
    fit = fit_boosted_stumps(x[:, None], x, rounds=200, max_depth=1, learning_rate=0.3, min_leaf_weight=1)
    assert np.mean((fit.predict(x[:, None]) - x) ** 2) < 1e-6


def test_boosting_loss_non_increasing():
    X, _, w, _ = synthetic()
    y = X[:, 0] ** 2 + np.sin(X[:, 1])
    fit = fit_boosted_stumps(X, y, w, rounds=60, max_depth=2)
    assert np.all(np.diff(fit.loss_trace) <= 1e-12)


def test_boosting_allows_unbounded_predictions():
    X = np.linspace(0, 1, 100)[:, None]
    y = 3 * X[:, 0] - 1
    p = fit_boosted_stumps(X, y, rounds=100, max_depth=1).predict(X)
    assert p.min() < 0 and p.max() > 1


def test_boosting_empty_input():
    with pytest.raises(ValueError):
        fit_boosted_stumps(np.zeros((2, 1)), [0.0, 1.0], np.zeros(2))


# -- cross-validation ---------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(10, 200), st.integers(2, 10), st.integers(0, 99))
def test_partition_balanced(n, V, seed):
    if n < V:
        return
    part = make_partition(n, V, seed)
    sizes = np.bincount(part.assignment, minlength=V)
    assert sizes.sum() == n and sizes.max() - sizes.min() <= 1


def test_partition_needs_two_folds():
    with pytest.raises(ValueError, match="fold count"):
        make_partition(10, 1)


def _fixture(seed=0, n=30):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, n).astype(float)
    y = (rng.random(n) < np.where(x > 0, 0.85, 0.2)).astype(float)
    return x[:, None], y


def _ce(y, p):
    p = np.clip(p, 1e-6, 1 - 1e-6)
    return -(y * np.log(p) + (1 - y) * np.log(1 - p))


def test_cv_risks_match_hand_computation():
    X, y = _fixture()
    part = make_partition(len(y), 3, seed=4)
    res = cv_select([EMPTY, INTERCEPT, SATURATED], Problem(X, y, np.ones(len(y))), part)
    hand = np.zeros(3)
    for v in range(3):
        tr, va = part.train(v), part.valid(v)
        hand[0] += _ce(y[va], 0.5).sum()
        hand[1] += _ce(y[va], y[tr].mean()).sum()
        cell = {c: y[tr][X[tr, 0] == c].mean() for c in (0.0, 1.0)}
        hand[2] += _ce(y[va], np.array([cell[c] for c in X[va, 0]])).sum()
    hand /= len(y)
    assert np.max(np.abs(res.risks - hand)) < 1e-10
    assert res.index == int(np.argmin(hand)) == 2


def test_cv_single_candidate():
    X, y = _fixture()
    res = cv_select([LOGISTIC], Problem(X, y, np.ones(len(y))), make_partition(len(y), 5))
    assert res.index == 0


def test_cv_tie_goes_to_first():
    X, y = _fixture()
    res = cv_select([INTERCEPT, INTERCEPT], Problem(X, y, np.ones(len(y))), make_partition(len(y), 5))
    assert res.index == 0 and res.risks[0] == res.risks[1]


def test_cv_prefers_truth_over_constant():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(400, 1))
    y = (rng.random(400) < expit(2 * X[:, 0])).astype(float)
    res = cv_select([INTERCEPT, LOGISTIC], Problem(X, y, np.ones(400)), make_partition(400, 5))
    assert res.index == 1 and res.risks[1] < res.risks[0]


def test_cv_failed_candidate_gets_infinite_risk():
    X, _ = _fixture()
    y = np.linspace(-1, 2, len(X))  # the logistic fit refuses unbounded responses
    res = cv_select([LOGISTIC, EMPTY], Problem(X, y, np.ones(len(y))), make_partition(len(y), 3), loss="logistic")
    assert np.isinf(res.risks[0]) and res.index == 1 and res.failures


def test_convex_vertices_only_equals_selector():
    X, y = _fixture(n=60)
    prob = Problem(X, y, np.ones(60))
    part = make_partition(60, 3)
    ens = fit_convex_ensemble([EMPTY, INTERCEPT, SATURATED], prob, part, grid_resolution=1)
    sel = cv_select([EMPTY, INTERCEPT, SATURATED], prob, part)
    assert np.array_equal(ens.weights, np.eye(3)[sel.index])
    assert ens.risk == pytest.approx(sel.risks[sel.index], abs=1e-12)


def test_convex_dominating_candidate():
    X, y = _fixture(n=80)
    ens = fit_convex_ensemble([SATURATED, EMPTY], Problem(X, y, np.ones(80)), make_partition(80, 4))
    assert ens.weights.tolist() == [1.0, 0.0]


def test_convex_interior_beats_vertices():
    rng = np.random.default_rng(11)
    n = 600
    x1, x2 = rng.normal(size=n), rng.normal(size=n)
    y = x1 + x2 + 0.1 * rng.normal(size=n)
    X = np.column_stack([x1, x2])
    # each candidate sees one half of the signal through its own column
    c1 = LearnerSpec("boosted-stumps", {"max_depth": 1, "rounds": 40, "learning_rate": 0.2})
    prob = Problem(X, y, np.ones(n))
    part = make_partition(n, 5)
    from sdrg.learners import cross_validate

    cv = cross_validate([c1, EMPTY], prob, part, "squared")
    ens = fit_convex_ensemble([c1, EMPTY], prob, part, "squared", 10, cv=cv)
    assert ens.risk <= cv.risks.min() + 1e-15


def test_super_learner_refits():
    X, y = _fixture(n=100)
    fit = super_learner([EMPTY, SATURATED], X, y, ensemble="discrete")
    assert np.allclose(fit.predict(X), fit_learner(SATURATED, X, y).predict(X))
