"""Nuisance fits shared by all estimators.

Outcome-regression estimates are stored as chains of link-scale terms so that
they can be re-evaluated on any dataset with the same column layout (for
example evaluation points or the enumerated support of a discrete model).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit, logit

from ..data import LongitudinalDataset, history
from ..learners import LearnerSpec, fit_learner, super_learner
from ..learners.logistic import FitError

log = logging.getLogger(__name__)

P_CLIP = 1e-6
ETA_CLIP = float(logit(1 - P_CLIP))


class EstimationError(RuntimeError):
    pass


# -- learner plans ------------------------------------------------------------

@dataclass(frozen=True)
class SuperLearnerSpec:
    """A library fitted by cross-validated selection or convex stacking."""

    candidates: tuple
    ensemble: str = "discrete"
    V: int = 5
    grid_resolution: int = 10

    def __str__(self):
        return f"SL[{self.ensemble}]({'; '.join(str(c) for c in self.candidates)})"


def fit_plan(plan, X, y, w, offset=None, *, loss="logistic", seed=0):
    """Fit a :class:`LearnerSpec` or :class:`SuperLearnerSpec`."""
    if isinstance(plan, SuperLearnerSpec):
        fit = super_learner(list(plan.candidates), X, y, w, offset, loss=loss, V=plan.V, seed=seed,
                            ensemble=plan.ensemble, grid_resolution=plan.grid_resolution)
        fit.spec = plan
        return fit
    return fit_learner(plan, X, y, w, offset, loss=loss)


def plan_for(plans, t: int):
    """Per-time lookup: ``plans`` is one plan for every time or a mapping ``t -> plan``."""
    if isinstance(plans, Mapping):
        try:
            return plans[t]
        except KeyError:
            raise EstimationError(f"no learner given for t={t}") from None
    return plans


def plan_candidates(plan) -> list:
    return list(plan.candidates) if isinstance(plan, SuperLearnerSpec) else [plan]


def stage_seed(seed: int, *parts: int) -> int:
    return int(np.random.SeedSequence([seed, *parts]).generate_state(1)[0])


# -- designs ----------------------------------------------------------------

def q_design(ds: LongitudinalDataset, t: int, columns=None) -> tuple[tuple, np.ndarray]:
    """Column names of the ``Q_t`` design (constant columns over the risk set dropped)."""
    hv = history(ds, t, "outcome", columns=columns, drop_constant=True)
    return hv.names, hv.matrix


def fit_rows(ds: LongitudinalDataset, t: int) -> np.ndarray:
    """Units whose data inform ``Q_t``: treated through ``t`` and not deterministic."""
    return ds.cum_treated(t) & ~ds.deterministic(t)


# -- treatment mechanism ----------------------------------------------------

@dataclass
class _ConstantFit:
    value: float

    def predict(self, X, offset=None):
        return np.full(np.asarray(X).shape[0], self.value)


@dataclass
class PropensityFit:
    """Fitted ``pi_t``, ``t = 1..K``, truncated below at ``delta``."""

    fits: list
    columns: list
    delta: float
    trunc_counts: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.fits)

    def raw(self, ds: LongitudinalDataset, t: int) -> np.ndarray:
        if t == 0:
            return np.ones(ds.n)
        return self.fits[t - 1].predict(ds.design(self.columns[t - 1]))

    def predict(self, ds: LongitudinalDataset, t: int) -> np.ndarray:
        if t == 0:
            return np.ones(ds.n)
        p = np.maximum(self.raw(ds, t), self.delta)
        return np.where(ds.deterministic(t), 1.0, p)

    def table(self, ds: LongitudinalDataset) -> np.ndarray:
        """``(n, K+1)`` array with column ``t`` holding the truncated ``pi_t`` (column 0 is one)."""
        return np.column_stack([self.predict(ds, t) for t in range(self.K + 1)])

    @property
    def trunc_count(self) -> int:
        return int(sum(self.trunc_counts))


def fit_propensities(ds: LongitudinalDataset, scenario=None, learner: LearnerSpec | None = None,
                     delta: float = 0.01, *, seed: int = 0) -> PropensityFit:
    """Logistic fit of ``A_t`` on the permitted history among units treated before ``t``.

    A scenario allow-list of ``()`` gives an intercept-only fit.  When every
    at-risk unit has the same treatment value the fit is that constant.
    """
    from ..learners import LOGISTIC

    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 0.5)")
    learner = LOGISTIC if learner is None else learner
    fits, cols, counts = [], [], []
    for t in range(1, ds.K + 1):
        allowed = None if scenario is None else scenario.g_cols(t)
        hv = history(ds, t, "treatment", columns=allowed, drop_constant=True)
        rows = hv.at_risk & ~ds.deterministic(t)
        if not rows.any():
            raise EstimationError(f"no at-risk units for the treatment fit at t={t}")
        a = ds.A(t)[rows].astype(float)
        if np.all(a == a[0]):
            fit = _ConstantFit(float(a[0]))
        else:
            try:
                fit = fit_plan(plan_for(learner, t), hv.matrix[rows], a, np.ones(rows.sum()),
                               seed=stage_seed(seed, 1, t))
            except FitError as exc:
                raise EstimationError(f"treatment fit failed at t={t}: {exc}") from exc
        fits.append(fit)
        cols.append(hv.names)
        p = fit.predict(hv.matrix[rows])
        counts.append(int(np.sum(p < delta)))
    return PropensityFit(fits, cols, delta, counts)


@dataclass
class KnownPropensity:
    """Propensities supplied as a function ``(ds, t) -> array`` (e.g. the true ones)."""

    fn: object
    K: int
    delta: float = 0.0
    trunc_count: int = 0

    def predict(self, ds, t):
        if t == 0:
            return np.ones(ds.n)
        p = np.asarray(self.fn(ds, t), dtype=float)
        if self.delta:
            p = np.maximum(p, self.delta)
        return np.where(ds.deterministic(t), 1.0, p)

    def table(self, ds):
        return np.column_stack([self.predict(ds, t) for t in range(self.K + 1)])


def weight_products(ds: LongitudinalDataset, pi_table: np.ndarray) -> np.ndarray:
    """``(n, K+1)`` array whose column ``t`` is ``prod_{s<=t} A_s / pi_s``."""
    A = np.column_stack([np.ones(ds.n), ds.treatment.astype(float)])
    return np.cumprod(A / pi_table, axis=1)


# -- outcome-regression predictors ------------------------------------------

@dataclass
class Term:
    """Link-scale contribution of one fitted learner on the named columns.

    ``clip_before`` clips the running linear predictor to the probability
    bounds before adding this term (the term acts as a fluctuation).
    """

    fit: object
    columns: tuple
    clip_before: bool = False

    def value(self, ds: LongitudinalDataset) -> np.ndarray:
        return self.fit.decision(ds.design(self.columns))


@dataclass
class CleverTerm:
    """Scalar fluctuation along ``1 / prod_{s<=t} pi_s``."""

    epsilon: float
    propensity: object
    t: int
    clip_before: bool = True

    def covariate(self, ds: LongitudinalDataset) -> np.ndarray:
        prod = np.ones(ds.n)
        for s in range(1, self.t + 1):
            prod = prod * self.propensity.predict(ds, s)
        return 1.0 / prod

    def value(self, ds):
        return self.epsilon * self.covariate(ds)


@dataclass
class Chain:
    """Sequence of terms; ``link`` is ``"logit"`` or ``"identity"``."""

    terms: list = field(default_factory=list)
    link: str = "logit"

    def eta(self, ds: LongitudinalDataset) -> np.ndarray:
        out = np.zeros(ds.n)
        for term in self.terms:
            if term.clip_before:
                out = np.clip(out, -ETA_CLIP, ETA_CLIP)
            out = out + term.value(ds)
        return out

    def predict(self, ds: LongitudinalDataset) -> np.ndarray:
        eta = self.eta(ds)
        return expit(eta) if self.link == "logit" else eta

    def extended(self, term) -> "Chain":
        return Chain(self.terms + [term], self.link)


@dataclass
class ResponsePredictor:
    """Response-scale predictor for fits whose output is not additive in a link."""

    fit: object
    columns: tuple

    def predict(self, ds):
        return self.fit.predict(ds.design(self.columns))


@dataclass
class OutcomeRegressionFit:
    """``Q_t`` predictors for ``t = 1..K``, the scalar ``Q_0`` and provenance tags."""

    K: int
    predictors: dict
    q0: float
    tags: dict = field(default_factory=dict)

    def predict(self, ds: LongitudinalDataset, t: int) -> np.ndarray:
        if t == 0:
            return np.full(ds.n, self.q0)
        if t == self.K + 1:
            return np.asarray(ds.outcome, dtype=float)
        p = self.predictors[t].predict(ds)
        return np.where(ds.deterministic(t), 1.0, p)

    def table(self, ds: LongitudinalDataset) -> np.ndarray:
        """``(n, K+2)`` array, column ``t`` holding ``Q_t`` (``t = 0..K+1``)."""
        return np.column_stack([self.predict(ds, t) for t in range(self.K + 2)])


@dataclass
class EstimatorReport:
    estimator: str
    estimate: float
    influence: np.ndarray | None
    se: float
    ci: tuple
    q_fit: OutcomeRegressionFit | None
    diagnostics: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "estimator": self.estimator,
            "Q0_hat": self.estimate,
            "se": self.se,
            "ci_lo": self.ci[0],
            "ci_hi": self.ci[1],
            "score_resid": self.diagnostics.get("score_resid", float("nan")),
            "trunc_count": self.diagnostics.get("trunc_count", 0),
        }
