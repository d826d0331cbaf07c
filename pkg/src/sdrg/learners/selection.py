"""V-fold cross-validation selector and convex-combination ensemble."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .base import fit_learner
from .spec import LearnerSpec

log = logging.getLogger(__name__)

P_CLIP = 1e-6


@dataclass(frozen=True)
class CvPartition:
    """Fold assignment; ``assignment[i]`` is the 0-based validation fold of unit ``i``."""

    V: int
    assignment: np.ndarray

    def __post_init__(self):
        if self.V < 2:
            raise ValueError("fold count ≥ 2 required")
        a = np.asarray(self.assignment)
        if a.min() < 0 or a.max() >= self.V:
            raise ValueError("fold index out of range")

    @property
    def n(self) -> int:
        return len(self.assignment)

    def train(self, v: int) -> np.ndarray:
        return self.assignment != v

    def valid(self, v: int) -> np.ndarray:
        return self.assignment == v

    def subset(self, rows) -> "CvPartition":
        return CvPartition(self.V, self.assignment[rows])


def make_partition(n: int, V: int = 5, seed: int = 0) -> CvPartition:
    """Seeded simple random partition with fold sizes differing by at most one."""
    if V < 2:
        raise ValueError("fold count ≥ 2 required")
    if n < V:
        raise ValueError(f"cannot split {n} units into {V} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % V
    return CvPartition(V, assignment)


def cross_entropy(y, p, w=None):
    """Pointwise weighted cross-entropy with ``p`` clipped to ``[1e-6, 1 - 1e-6]``."""
    p = np.clip(p, P_CLIP, 1 - P_CLIP)
    out = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    return out if w is None else w * out


def squared_error(y, p, w=None):
    out = (y - p) ** 2
    return out if w is None else w * out


def pointwise_loss(loss: str):
    return cross_entropy if loss == "logistic" else squared_error


@dataclass
class Problem:
    """Regression data for one nuisance version: ``w == 0`` rows are ignored."""

    X: np.ndarray
    y: np.ndarray
    w: np.ndarray
    offset: np.ndarray | None = None

    def rows(self, mask):
        off = None if self.offset is None else self.offset[mask]
        return self.X[mask], self.y[mask], self.w[mask], off


@dataclass
class CvResult:
    index: int
    risks: np.ndarray
    fold_fits: list  # fold_fits[v][m]; None when the fit failed
    oof_link: np.ndarray  # (M, n) out-of-fold link-scale predictions
    oof_response: np.ndarray
    failures: list = field(default_factory=list)


def _as_problems(data, V):
    if isinstance(data, Problem):
        return [data] * V
    data = list(data)
    if len(data) != V:
        raise ValueError("need one problem per fold")
    return data


def cross_validate(candidates: Sequence[LearnerSpec], data, partition: CvPartition, loss: str = "logistic") -> CvResult:
    """Fit each candidate on every training split and score it on the held-out fold.

    ``data`` is one :class:`Problem` shared by all folds or a list of ``V``
    fold-specific problems (nuisance fits trained without the fold).  The risk
    of candidate ``m`` is ``n^{-1} sum_i loss(Z_i; fit^{v_i, m})``.
    """
    if not candidates:
        raise ValueError("at least one candidate required")
    problems = _as_problems(data, partition.V)
    M, n = len(candidates), partition.n
    lossf = pointwise_loss(loss)
    oof_link = np.full((M, n), np.nan)
    oof_resp = np.full((M, n), np.nan)
    total = np.zeros(M)
    fits = []
    failures = []
    for v in range(partition.V):
        prob = problems[v]
        tr, va = partition.train(v), partition.valid(v)
        Xtr, ytr, wtr, otr = prob.rows(tr)
        Xva, yva, wva, ova = prob.rows(va)
        row = []
        for m, spec in enumerate(candidates):
            if not np.isfinite(total[m]):
                row.append(None)
                continue
            try:
                fit = fit_learner(spec, Xtr, ytr, wtr, otr, loss=loss)
                eta = fit.decision(Xva, ova)
                pred = fit.predict(Xva, ova)
                if not np.all(np.isfinite(pred)):
                    raise FloatingPointError("non-finite predictions")
            except Exception as exc:  # noqa: BLE001 - any failure disqualifies the candidate
                log.warning("candidate %d (%s) failed on fold %d: %s", m, spec, v, exc)
                failures.append((m, v, repr(exc)))
                total[m] = np.inf
                row.append(None)
                continue
            oof_link[m, va] = eta
            oof_resp[m, va] = pred
            total[m] += float(np.sum(lossf(yva, pred, wva)))
            row.append(fit)
        fits.append(row)
    risks = total / n
    return CvResult(int(np.argmin(risks)), risks, fits, oof_link, oof_resp, failures)


def cv_select(candidates, data, partition: CvPartition, loss: str = "logistic") -> CvResult:
    """Discrete selector: the candidate with the smallest cross-validated risk.

    Ties go to the lowest index (``np.argmin`` returns the first minimiser).
    """
    return cross_validate(candidates, data, partition, loss)


def simplex_grid(M: int, resolution: int) -> np.ndarray:
    """Points of the ``1/resolution`` lattice on the simplex, vertices first."""
    verts = np.eye(M)
    pts = []
    for c in itertools.combinations(range(resolution + M - 1), M - 1):
        parts = np.diff(np.concatenate([[-1], c, [resolution + M - 1]])) - 1
        if np.count_nonzero(parts) > 1:
            pts.append(parts / resolution)
    return np.vstack([verts] + pts) if pts else verts


def combine(weights, links, responses, loss: str):
    """Convex combination: link scale for cross-entropy, response scale otherwise."""
    if loss == "logistic":
        return expit(np.tensordot(weights, links, axes=1))
    return np.tensordot(weights, responses, axes=1)


@dataclass
class EnsembleResult:
    weights: np.ndarray
    risk: float
    cv: CvResult
    grid_risks: np.ndarray


def fit_convex_ensemble(candidates, data, partition: CvPartition, loss: str = "logistic",
                        grid_resolution: int = 10, cv: CvResult | None = None) -> EnsembleResult:
    """Best convex weights over a simplex lattice by cross-validated risk.

    The lattice contains the vertices, so the result is never worse than the
    discrete selector.  Candidates that failed on any fold get weight zero.
    """
    M = len(candidates)
    if M < 2:
        raise ValueError("convex ensemble needs at least two candidates")
    if cv is None:
        cv = cross_validate(candidates, data, partition, loss)
    problems = _as_problems(data, partition.V)
    y = np.empty(partition.n)
    w = np.empty(partition.n)
    for v in range(partition.V):
        va = partition.valid(v)
        y[va] = problems[v].y[va]
        w[va] = problems[v].w[va]
    ok = np.isfinite(cv.risks)
    grid = simplex_grid(M, grid_resolution)
    lossf = pointwise_loss(loss)
    links = np.where(ok[:, None], cv.oof_link, 0.0)
    resp = np.where(ok[:, None], cv.oof_response, 0.0)
    risks = np.full(len(grid), np.inf)
    for g, wt in enumerate(grid):
        if np.any(wt[~ok] > 0):
            continue
        pred = combine(wt, links, resp, loss)
        risks[g] = float(np.sum(lossf(y, pred, w))) / partition.n
    best = int(np.argmin(risks))
    return EnsembleResult(grid[best], float(risks[best]), cv, risks)


@dataclass
class EnsembleFit:
    """Convex combination of fitted learners (link scale for the logit link)."""

    members: list
    weights: np.ndarray
    link: str = "logit"
    spec: object = None

    def decision(self, X, offset=None):
        if self.link == "logit":
            return sum(a * f.decision(X, offset) for a, f in zip(self.weights, self.members))
        return self.predict(X, offset)

    def predict(self, X, offset=None):
        if self.link == "logit":
            return expit(self.decision(X, offset))
        return sum(a * f.predict(X, offset) for a, f in zip(self.weights, self.members))


def fit_weighted(candidates, weights, X, y, w=None, offset=None, loss: str = "logistic") -> EnsembleFit:
    """Refit the candidates with non-zero weight on all rows and combine them."""
    members, wts = [], []
    for spec, a in zip(candidates, weights):
        if a > 0:
            members.append(fit_learner(spec, X, y, w, offset, loss=loss))
            wts.append(float(a))
    return EnsembleFit(members, np.array(wts), "logit" if loss == "logistic" else "identity")


def super_learner(candidates, X, y, w=None, offset=None, *, loss: str = "logistic", V: int = 5,
                  seed: int = 0, ensemble: str = "convex", grid_resolution: int = 10):
    """Cross-validated selection (``"discrete"``) or convex stacking, refitted on all rows."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if len(candidates) == 1:
        return fit_learner(candidates[0], X, y, w, offset, loss=loss)
    keep = w > 0
    part = make_partition(int(keep.sum()), V, seed)
    prob = Problem(X[keep], y[keep], w[keep], None if offset is None else np.asarray(offset)[keep])
    if ensemble == "discrete":
        res = cv_select(candidates, prob, part, loss)
        weights = np.eye(len(candidates))[res.index]
    else:
        weights = fit_convex_ensemble(candidates, prob, part, loss, grid_resolution).weights
    return fit_weighted(candidates, weights, X, y, w, offset, loss)
