"""Influence-curve standard errors and Wald intervals for ``Q_0``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri


@dataclass
class InfluenceCurve:
    values: np.ndarray
    terms: np.ndarray | None = None  # (n, K+1): term t of the sum, when available

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def variance(self) -> float:
        return float(np.var(self.values, ddof=1)) if self.n > 1 else float("nan")

    @property
    def se(self) -> float:
        return float(np.sqrt(self.variance / self.n))

    def term_means(self) -> np.ndarray:
        return self.terms.mean(axis=0) if self.terms is not None else np.array([self.mean])


def influence_terms(q_table: np.ndarray, w_table: np.ndarray) -> np.ndarray:
    """Per-unit terms ``(prod_{s<=t} A_s/pi_s) (Q_{t+1} - Q_t)`` for ``t = 0..K``.

    ``q_table`` has columns ``Q_0..Q_{K+1}``; ``w_table`` has columns for
    ``t = 0..K`` (column 0 is one).
    """
    diff = q_table[:, 1:] - q_table[:, :-1]
    # units off the treated path have zero weight; their Q values are irrelevant
    return np.where(w_table != 0, w_table * diff, 0.0)


def influence_curve(ds, q_fit, propensity) -> InfluenceCurve:
    """``IF_i = sum_t (prod_{s<=t} A_s/pi_s)(Q_{t+1} - Q_t)`` from a fitted estimator."""
    from .estimators.nuisance import weight_products

    if q_fit is None:
        raise ValueError("missing targeted fits")
    terms = influence_terms(q_fit.table(ds), weight_products(ds, propensity.table(ds)))
    return InfluenceCurve(terms.sum(axis=1), terms)


def normal_quantile(p: float) -> float:
    """Standard normal quantile (inverse CDF)."""
    return float(ndtri(p))


def wald_ci(estimate: float, ic: InfluenceCurve | np.ndarray, level: float = 0.95) -> tuple[float, float]:
    """``estimate -/+ z_{(1+level)/2} * sd(IF) / sqrt(n)``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if not isinstance(ic, InfluenceCurve):
        ic = InfluenceCurve(np.asarray(ic, dtype=float))
    if ic.n < 2:
        raise ValueError("need n >= 2 for a variance estimate")
    half = normal_quantile((1 + level) / 2) * ic.se
    return estimate - half, estimate + half
