"""Weighted logistic regression with a fixed offset, fitted by IRLS.

Responses may be fractional (quasi-binomial).  With ``allow_unbounded`` they
may even leave ``[0, 1]``: the cross-entropy stays convex in the linear
predictor, so Newton iterations still solve the score equations whenever a
solution exists.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)

RIDGE = 1e-8
COND_LIMIT = 1e12


class FitError(RuntimeError):
    pass


def _loss(eta, y, w):
    # w * [log(1 + e^eta) - y * eta]; convex in eta for any real y
    return float(np.sum(w * (np.logaddexp(0.0, eta) - y * eta)))


@dataclass
class LogisticFit:
    coef: np.ndarray
    intercept: float
    fit_intercept: bool
    stabilized: bool = False
    converged: bool = True
    n_iter: int = 0
    spec: object = None
    link: str = "logit"

    def decision(self, X, offset=None):
        X = np.asarray(X, dtype=float)
        eta = X @ self.coef if self.coef.size else np.zeros(X.shape[0])
        eta = eta + self.intercept
        if offset is not None:
            eta = eta + offset
        return eta

    def predict(self, X, offset=None):
        return expit(self.decision(X, offset))


def fit_logistic(
    X,
    y,
    w=None,
    offset=None,
    *,
    fit_intercept: bool = True,
    allow_unbounded: bool = False,
    max_iter: int = 100,
    tol: float = 1e-10,
) -> LogisticFit:
    """Maximise the weighted cross-entropy likelihood with a fixed offset.

    Rows with zero weight are ignored.  When the weighted information matrix is
    ill conditioned (condition number above 1e12) a ridge term ``1e-8 * I`` is
    added and the fit is flagged ``stabilized``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if X.ndim == 1:
        X = X.reshape(n, -1)
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if np.any(w < 0):
        raise FitError("negative weights")
    keep = w > 0
    if not keep.any():
        raise FitError("all weights are zero")
    if not keep.all():
        X, y, w, offset = X[keep], y[keep], w[keep], offset[keep]
    if not allow_unbounded and (y.min() < 0 or y.max() > 1):
        raise FitError("responses outside [0,1]")

    Z = np.column_stack([np.ones(len(y)), X]) if fit_intercept else X
    p_dim = Z.shape[1]
    if p_dim == 0:
        return LogisticFit(np.zeros(0), 0.0, False, spec=None)

    beta = np.zeros(p_dim)
    if fit_intercept:
        ybar = np.clip(np.average(y, weights=w), 1e-6, 1 - 1e-6)
        beta[0] = np.log(ybar / (1 - ybar)) - np.average(offset, weights=w)

    ridge = 0.0
    eta = offset + Z @ beta
    dev = _loss(eta, y, w)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(eta)
        score = Z.T @ (w * (y - p)) - ridge * beta
        info = (Z * (w * p * (1 - p))[:, None]).T @ Z
        if ridge == 0.0 and (not np.all(np.isfinite(info)) or np.linalg.cond(info) > COND_LIMIT):
            ridge = RIDGE
            log.debug("logistic fit: ill-conditioned information, adding ridge")
            score = score - ridge * beta
        if ridge:
            info = info + ridge * np.eye(p_dim)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        # step halving keeps the penalised loss non-increasing
        obj_old = dev + 0.5 * ridge * beta @ beta
        for _ in range(30):
            cand = beta + step
            eta_c = offset + Z @ cand
            dev_c = _loss(eta_c, y, w)
            if dev_c + 0.5 * ridge * cand @ cand <= obj_old + 1e-12 * (1 + abs(obj_old)):
                break
            step = step / 2
        change = abs(dev - dev_c)
        beta, eta, dev = cand, eta_c, dev_c
        if change < tol and np.max(np.abs(step)) < 1e-7:
            converged = True
            break

    if converged:
        # one extra Newton step polishes the score equations
        p = expit(eta)
        score = Z.T @ (w * (y - p)) - ridge * beta
        info = (Z * (w * p * (1 - p))[:, None]).T @ Z + ridge * np.eye(p_dim)
        try:
            beta = beta + np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            pass
    else:
        log.debug("logistic fit did not converge in %d iterations", max_iter)

    if fit_intercept:
        return LogisticFit(beta[1:].copy(), float(beta[0]), True, ridge > 0, converged, it)
    return LogisticFit(beta.copy(), 0.0, False, ridge > 0, converged, it)


def score_residual(fit: LogisticFit, X, y, w=None, offset=None) -> np.ndarray:
    """Weighted score ``sum_i w_i (y_i - p_i) z_i`` at the fitted coefficients."""
    X = np.asarray(X, dtype=float)
    n = len(y)
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    p = fit.predict(X, offset)
    Z = np.column_stack([np.ones(n), X]) if fit.fit_intercept else X
    return Z.T @ (w * (np.asarray(y, dtype=float) - p))
