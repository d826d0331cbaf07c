"""Gradient boosting with depth-limited regression trees.

Squared-error boosting accepts any real response (used for doubly robust
pseudo-outcomes that leave ``[0, 1]``); the logistic variant boosts the
cross-entropy on the logit scale and is used for bounded responses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._tree import boost_kernel, predict_kernel
from .spec import BOOST_DEFAULTS


def _thresholds(x: np.ndarray, max_bins: int) -> np.ndarray:
    u = np.unique(x)
    if u.size <= 1:
        return np.zeros(0)
    cand = u[:-1]
    if cand.size > max_bins - 1:
        q = np.linspace(0, 1, max_bins + 1)[1:-1]
        cand = np.unique(np.quantile(u[:-1], q, method="lower"))
    return cand


def _logistic_intercept(y, w, offset):
    b = 0.0
    for _ in range(50):
        p = expit(offset + b)
        g = np.sum(w * (y - p))
        h = np.sum(w * p * (1 - p))
        if h <= 0:
            break
        step = np.clip(g / h, -5, 5)
        b += step
        if abs(step) < 1e-12:
            break
    return b


@dataclass
class BoostedFit:
    base: float
    features: np.ndarray  # (rounds, nodes) int64, -1 marks a leaf
    thresholds: np.ndarray
    values: np.ndarray
    loss_trace: np.ndarray
    link: str = "identity"
    spec: object = None

    def decision(self, X, offset=None):
        X = np.ascontiguousarray(X, dtype=float)
        n = X.shape[0]
        out = np.full(n, self.base)
        if offset is not None:
            out = out + offset
        if self.features.shape[0]:
            predict_kernel(X, self.features, self.thresholds, self.values, out)
        return out

    def predict(self, X, offset=None):
        eta = self.decision(X, offset)
        return expit(eta) if self.link == "logit" else eta


def fit_boosted_stumps(X, y, w=None, offset=None, *, loss: str = "squared", **params) -> BoostedFit:
    """Stagewise boosting of depth-limited trees on weighted rows.

    ``loss`` is ``"squared"`` (identity link, any real ``y``) or ``"logistic"``
    (logit link, ``y`` in ``[0, 1]``).  The round-0 prediction is the weighted
    mean of ``y - offset`` for squared loss and the offset-adjusted intercept
    MLE for the logistic loss.
    """
    hp = {**BOOST_DEFAULTS, **params}
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if X.ndim == 1:
        X = X.reshape(n, -1)
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    keep = w > 0
    if not keep.any():
        raise ValueError("boosting needs at least one row with positive weight")
    X, y, w, offset = X[keep], y[keep], w[keep], offset[keep]
    logistic = loss == "logistic"
    if loss not in ("squared", "logistic"):
        raise ValueError(f"unknown boosting loss {loss!r}")

    if logistic:
        base = _logistic_intercept(y, w, offset)
    else:
        base = float(np.sum(w * (y - offset)) / np.sum(w))

    p = X.shape[1]
    thr = [_thresholds(X[:, j], int(hp["max_bins"])) for j in range(p)]
    codes = np.empty(X.shape, dtype=np.int64)
    for j in range(p):
        codes[:, j] = np.searchsorted(thr[j], X[:, j], side="left")
    n_bins = np.array([t.size + 1 for t in thr], dtype=np.int64)

    rounds = int(hp["rounds"])
    depth = int(hp["max_depth"])
    n_nodes = 2 ** (depth + 1) - 1
    feat = np.full((rounds, n_nodes), -1, dtype=np.int64)
    bins = np.zeros((rounds, n_nodes), dtype=np.int64)
    vals = np.zeros((rounds, n_nodes))
    trace = np.zeros(rounds)
    if rounds and p:
        boost_kernel(codes, n_bins, y, w, offset, base, logistic, rounds, float(hp["learning_rate"]),
                     depth, float(hp["min_leaf_weight"]), float(hp["reg_lambda"]), feat, bins, vals, trace)
    elif rounds:
        # no covariates: each round can only move the constant
        return fit_boosted_stumps(np.zeros((len(y), 1)), y, w, offset, loss=loss, **params)

    thresholds = np.zeros((rounds, n_nodes))
    split = feat >= 0
    for r, k in zip(*np.nonzero(split)):
        thresholds[r, k] = thr[feat[r, k]][bins[r, k]]
    return BoostedFit(
        base=base,
        features=feat,
        thresholds=thresholds,
        values=vals,
        loss_trace=trace,
        link="logit" if logistic else "identity",
    )
