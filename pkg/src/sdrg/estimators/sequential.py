"""Plug-in, inverse weighting, LTMLE and doubly robust transform estimators."""
from __future__ import annotations

import numpy as np

from ..data import LongitudinalDataset
from ..inference import InfluenceCurve, influence_terms, wald_ci
from ..learners import fit_logistic
from ..learners.logistic import FitError
from .nuisance import (
    Chain,
    CleverTerm,
    EstimationError,
    EstimatorReport,
    OutcomeRegressionFit,
    ResponsePredictor,
    Term,
    ETA_CLIP,
    fit_plan,
    fit_rows,
    plan_for,
    q_design,
    stage_seed,
    weight_products,
)

NAN_CI = (float("nan"), float("nan"))


def _q_cols(scenario, t):
    return None if scenario is None else scenario.q_cols(t)


def _regress(ds, t, y, learners, scenario, loss, seed):
    names, X = q_design(ds, t, _q_cols(scenario, t))
    rows = fit_rows(ds, t)
    if not rows.any():
        raise EstimationError(f"empty at-risk set at t={t}")
    try:
        fit = fit_plan(plan_for(learners, t), X[rows], y[rows], np.ones(int(rows.sum())),
                       loss=loss, seed=stage_seed(seed, 2, t))
    except FitError as exc:
        raise EstimationError(f"outcome regression failed at t={t}: {exc}") from exc
    return names, X, rows, fit


def _forced(ds, t, q):
    return np.where(ds.deterministic(t), 1.0, q)


def direct_plugin(ds: LongitudinalDataset, learners, scenario=None, *, seed: int = 0) -> EstimatorReport:
    """Sequential regression from ``t = K`` down to ``1``; ``Q_0`` is the mean of ``Q_1``."""
    q_next = np.asarray(ds.outcome, dtype=float)
    preds = {}
    for t in range(ds.K, 0, -1):
        names, _, _, fit = _regress(ds, t, q_next, learners, scenario, "logistic", seed)
        preds[t] = Chain([Term(fit, names)])
        q_next = _forced(ds, t, preds[t].predict(ds))
    q0 = float(np.mean(q_next))
    qf = OutcomeRegressionFit(ds.K, preds, q0, {t: "none" for t in preds})
    return EstimatorReport("plugin", q0, None, float("nan"), NAN_CI, qf, {"score_resid": float("nan")})


def ipw(ds: LongitudinalDataset, propensity, *, level: float = 0.95) -> EstimatorReport:
    """``n^{-1} sum_i (prod_t A_t / pi_t) Y_i`` with the centred terms as influence values."""
    w = weight_products(ds, propensity.table(ds))[:, ds.K]
    terms = w * ds.outcome
    est = float(np.mean(terms))
    ic = InfluenceCurve(terms - est)
    return EstimatorReport("ipw", est, ic.values, ic.se, wald_ci(est, ic, level), None,
                           {"score_resid": float("nan"), "trunc_count": propensity.trunc_count,
                            "max_weight": float(w.max()) if len(w) else 0.0})


def _targeting_diagnostics(ds, qf, propensity):
    terms = influence_terms(qf.table(ds), weight_products(ds, propensity.table(ds)))
    means = terms.mean(axis=0)
    return terms, {
        "score_resid": float(np.max(np.abs(means))),
        "ee_resid": float(abs(terms.sum())),
        "term_means": means.tolist(),
        "trunc_count": propensity.trunc_count,
    }


def ltmle(ds: LongitudinalDataset, propensity, learners, scenario=None, *, seed: int = 0,
          level: float = 0.95) -> EstimatorReport:
    """Sequential regression with a scalar fluctuation along ``1 / prod_{s<=t} pi_s``.

    Each initial fit is updated on the logit scale with offset ``logit Q_t``
    (clipped) so that the efficient estimating equation holds at the end.
    """
    q_next = np.asarray(ds.outcome, dtype=float)
    preds, eps = {}, {}
    for t in range(ds.K, 0, -1):
        names, X, rows, init = _regress(ds, t, q_next, learners, scenario, "logistic", seed)
        offset = np.clip(init.decision(X), -ETA_CLIP, ETA_CLIP)
        clever = CleverTerm(0.0, propensity, t)
        H = clever.covariate(ds)
        try:
            flu = fit_logistic(H[rows, None], q_next[rows], None, offset[rows], fit_intercept=False)
        except FitError as exc:
            raise EstimationError(f"fluctuation failed at t={t}: {exc}") from exc
        clever.epsilon = float(flu.coef[0])
        eps[t] = clever.epsilon
        preds[t] = Chain([Term(init, names), clever])
        q_next = _forced(ds, t, preds[t].predict(ds))
    # at t = 0 the fluctuation is an intercept, whose MLE reproduces the mean
    q0 = float(np.mean(q_next))
    qf = OutcomeRegressionFit(ds.K, preds, q0, {t: "univariate" for t in preds})
    terms, diag = _targeting_diagnostics(ds, qf, propensity)
    diag["epsilon"] = eps
    ic = InfluenceCurve(terms.sum(axis=1), terms)
    return EstimatorReport("ltmle", q0, ic.values, ic.se, wald_ci(q0, ic, level), qf, diag)


def dr_transform(ds: LongitudinalDataset, propensity, learners, scenario=None, *, seed: int = 0,
                 level: float = 0.95, loss: str = "squared") -> EstimatorReport:
    """Regress the doubly robust pseudo-outcome ``Gamma_t`` on the history, ``t = K..1``.

    Uses the recursion ``Gamma_{t-1} = Q_t + (A_t / pi_t)(Gamma_t - Q_t)``
    with ``Gamma_K = Y``; ``Q_0`` is the mean of ``Gamma_0`` and the interval
    uses the centred ``Gamma_0`` values.  Pseudo-outcomes are not clipped.
    """
    gamma = np.asarray(ds.outcome, dtype=float).copy()
    preds = {}
    for t in range(ds.K, 0, -1):
        names, _, _, fit = _regress(ds, t, gamma, learners, scenario, loss, seed)
        preds[t] = ResponsePredictor(fit, names)
        q_t = _forced(ds, t, preds[t].predict(ds))
        a = ds.A(t).astype(float)
        gamma = q_t + a / propensity.predict(ds, t) * (gamma - q_t)
    q0 = float(np.mean(gamma))
    ic = InfluenceCurve(gamma - q0)
    qf = OutcomeRegressionFit(ds.K, preds, q0, {t: "none" for t in preds})
    return EstimatorReport("dr_transform", q0, ic.values, ic.se, wald_ci(q0, ic, level), qf,
                           {"score_resid": float("nan"), "trunc_count": getattr(propensity, "trunc_count", 0),
                            "gamma_range": (float(gamma.min()), float(gamma.max()))})


def dr_pseudo_outcomes(ds: LongitudinalDataset, q_fit: OutcomeRegressionFit, propensity) -> np.ndarray:
    """``(n, K+1)`` array of ``Gamma_t`` built from given ``Q_s`` (column ``t``)."""
    K = ds.K
    out = np.empty((ds.n, K + 1))
    gamma = np.asarray(ds.outcome, dtype=float).copy()
    out[:, K] = gamma
    for t in range(K, 0, -1):
        q_t = q_fit.predict(ds, t)
        gamma = q_t + ds.A(t) / propensity.predict(ds, t) * (gamma - q_t)
        out[:, t - 1] = gamma
    return out


def ipw_risk(q_cand, ds: LongitudinalDataset, propensity, t: int) -> float:
    """Inverse-weighted squared-error risk of a candidate ``Q_t``.

    Mean over units treated through ``t`` of
    ``(prod_{s=t+1}^K A_s / pi_s)(Y - q_cand(H_t))^2``.
    """
    if not 0 <= t <= ds.K:
        raise ValueError("t out of range")
    q = np.asarray(q_cand(ds) if callable(q_cand) else q_cand, dtype=float)
    q = np.broadcast_to(q, (ds.n,))
    w = np.ones(ds.n)
    for s in range(t + 1, ds.K + 1):
        w = w * ds.A(s) / propensity.predict(ds, s)
    rows = ds.cum_treated(t)
    if not rows.any():
        return float("nan")
    return float(np.mean((w * (ds.outcome - q) ** 2)[rows]))
