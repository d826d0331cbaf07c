"""Uniform fitting interface over the learner families.

Every fitted learner exposes ``decision(X, offset)`` (the link-scale value,
additive in the offset) and ``predict(X, offset)`` (the response-scale value).
``link`` is ``"logit"`` for the cross-entropy loss and ``"identity"`` for the
squared-error loss.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .boosting import fit_boosted_stumps
from .logistic import fit_logistic
from .spec import LearnerSpec

LOSSES = ("logistic", "squared")
CELL_CLAMP = 30.0


@dataclass
class EmptyFit:
    """Leaves the offset unchanged."""

    link: str = "logit"
    spec: object = None

    def decision(self, X, offset=None):
        n = np.asarray(X).shape[0]
        return np.zeros(n) if offset is None else np.asarray(offset, dtype=float).copy()

    def predict(self, X, offset=None):
        eta = self.decision(X, offset)
        return expit(eta) if self.link == "logit" else eta


def _row_keys(X: np.ndarray) -> list:
    X = np.ascontiguousarray(X, dtype=float)
    return [r.tobytes() for r in X]


@dataclass
class SaturatedFit:
    """One free parameter per distinct covariate row; unseen rows get ``fallback``."""

    cells: dict = field(default_factory=dict)
    fallback: float = 0.0
    link: str = "logit"
    spec: object = None

    def decision(self, X, offset=None):
        X = np.asarray(X, dtype=float)
        if X.shape[1] == 0:
            vals = np.full(X.shape[0], self.cells.get(b"", self.fallback))
        else:
            vals = np.array([self.cells.get(k, self.fallback) for k in _row_keys(X)])
        return vals if offset is None else vals + offset

    def predict(self, X, offset=None):
        eta = self.decision(X, offset)
        return expit(eta) if self.link == "logit" else eta


def _cell_newton(y, w, offset, inv, m):
    b = np.zeros(m)
    for _ in range(100):
        p = expit(offset + b[inv])
        g = np.bincount(inv, w * (y - p), minlength=m)
        h = np.bincount(inv, w * p * (1 - p), minlength=m)
        step = np.where(h > 1e-300, g / np.maximum(h, 1e-300), np.sign(g) * 5.0)
        step = np.clip(step, -5.0, 5.0)
        b = np.clip(b + step, -CELL_CLAMP, CELL_CLAMP)
        if np.max(np.abs(step)) < 1e-13:
            break
    return b


def fit_saturated(X, y, w=None, offset=None, *, loss: str = "logistic") -> SaturatedFit:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    keep = w > 0
    if not keep.any():
        raise ValueError("saturated fit needs at least one row with positive weight")
    X, y, w, offset = X[keep], y[keep], w[keep], offset[keep]
    if X.shape[1] == 0:
        uniq, inv = np.zeros((1, 0)), np.zeros(len(y), dtype=np.int64)
    else:
        uniq, inv = np.unique(X, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
    m = uniq.shape[0]
    if loss == "logistic":
        vals = _cell_newton(y, w, offset, inv, m)
        fallback = float(_cell_newton(y, w, offset, np.zeros(len(y), dtype=np.int64), 1)[0])
        link = "logit"
    else:
        r = y - offset
        vals = np.bincount(inv, w * r, minlength=m) / np.bincount(inv, w, minlength=m)
        fallback = float(np.sum(w * r) / np.sum(w))
        link = "identity"
    keys = [b""] if X.shape[1] == 0 else _row_keys(uniq)
    return SaturatedFit(dict(zip(keys, vals.tolist())), fallback, link)


@dataclass
class GlmFit:
    """Quasi-logistic GLM wrapper remembering which loss it was fitted for."""

    inner: object
    link: str = "logit"
    spec: object = None

    @property
    def stabilized(self) -> bool:
        return self.inner.stabilized

    def decision(self, X, offset=None):
        return self.inner.decision(X, offset)

    def predict(self, X, offset=None):
        return self.inner.predict(X, offset)


def fit_learner(spec: LearnerSpec, X, y, w=None, offset=None, *, loss: str = "logistic"):
    """Fit ``spec`` by minimising ``loss`` (``"logistic"`` or ``"squared"``).

    For the logistic-regression families the squared-error request is served by
    a quasi-logistic fit of the unbounded response, so predictions stay in
    ``(0, 1)``.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X.reshape(len(y), -1)
    fam = spec.family
    if fam == "empty":
        fit = EmptyFit(link="logit" if loss == "logistic" else "identity")
    elif fam == "logistic-main-terms":
        fit = GlmFit(fit_logistic(X, y, w, offset, allow_unbounded=loss == "squared"))
    elif fam == "logistic-intercept-only":
        fit = GlmFit(fit_logistic(X[:, :0], y, w, offset, allow_unbounded=loss == "squared"))
        fit = _InterceptOnly(fit)
    elif fam == "saturated":
        fit = fit_saturated(X, y, w, offset, loss=loss)
    elif fam == "boosted-stumps":
        fit = fit_boosted_stumps(X, y, w, offset, loss=loss, **spec.params())
    else:  # pragma: no cover - LearnerSpec validates families
        raise ValueError(fam)
    fit.spec = spec
    return fit


@dataclass
class _InterceptOnly:
    inner: GlmFit
    spec: object = None

    @property
    def link(self):
        return self.inner.link

    @property
    def stabilized(self) -> bool:
        return self.inner.stabilized

    def decision(self, X, offset=None):
        return self.inner.decision(np.asarray(X)[:, :0], offset)

    def predict(self, X, offset=None):
        return self.inner.predict(np.asarray(X)[:, :0], offset)
