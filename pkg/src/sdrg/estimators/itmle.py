"""Iterated targeting of outcome regressions (iTMLE) and its cross-validated form.

For each ``s = K, ..., t0`` the estimate of ``Q_s`` is built as a chain of
link-scale terms.  Stage ``(s, t)`` fits a function of ``H_t`` by weighted
cross-entropy regression of ``Q*_{s+1}`` with offset ``logit Q_s^{t+1}`` and
weight ``A_t prod_{r=t+1}^s A_r / pi_r``.  The class used at ``t = 0`` is the
intercept-only logistic regression, so for ``t0 = 0`` every term of the
influence function has empirical mean zero.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..data import LongitudinalDataset
from ..inference import InfluenceCurve, wald_ci
from ..learners import INTERCEPT, LOGISTIC, Problem, cross_validate, fit_convex_ensemble, make_partition
from ..learners.logistic import FitError
from ..learners.selection import CvPartition, EnsembleFit
from .nuisance import (
    ETA_CLIP,
    Chain,
    EstimationError,
    EstimatorReport,
    OutcomeRegressionFit,
    Term,
    fit_plan,
    fit_propensities,
    plan_candidates,
    plan_for,
    q_design,
    stage_seed,
)
from .sequential import _targeting_diagnostics

log = logging.getLogger(__name__)

INITS = ("learner", "half")
NAN_CI = (float("nan"), float("nan"))


@dataclass
class _Track:
    """One version of the running estimates (full data, or a training fold)."""

    pi: np.ndarray  # (n, K+1) truncated propensities
    q_next: np.ndarray  # Q*_{s+1} on all units
    chain: Chain = None
    eta: np.ndarray = None
    w: np.ndarray = None
    preds: dict = field(default_factory=dict)


def _check(ds, t0, init):
    if not 0 <= t0 <= ds.K:
        raise ValueError(f"t0 must lie in [0, {ds.K}]")
    if init not in INITS:
        raise ValueError(f"init must be one of {INITS}")


def _stage_columns(ds, scenario, t):
    cols = None if scenario is None else scenario.q_cols(t)
    return q_design(ds, t, cols)


def _degenerate(y, w):
    y = y[w > 0]
    return y.size > 0 and (np.all(y <= 0) or np.all(y >= 1))


def _run(ds, t0, tracks, stage_fitter, scenario, init):
    """Shared backward loop; ``stage_fitter(s, t, kind, names, X)`` extends every track."""
    K = ds.K
    flags = []
    for s in range(K, max(t0, 1) - 1, -1):
        at_risk = (ds.cum_treated(s) & ~ds.deterministic(s)).astype(float)
        for tr in tracks.values():
            tr.chain = Chain()
            tr.eta = np.zeros(ds.n)
            tr.w = at_risk.copy()
        for t in range(s, t0 - 1, -1):
            if t < s:
                for tr in tracks.values():
                    tr.w = tr.w / tr.pi[:, t + 1]
            if t == 0:
                kind = "intercept"
            elif t == s and init == "learner":
                kind = "learner"
            else:
                kind = "target"
            names, X = _stage_columns(ds, scenario, t) if t > 0 else ((), np.zeros((ds.n, 0)))
            full = tracks["full"]
            if _degenerate(full.q_next, full.w):
                log.warning("pseudo-outcome for Q_%d degenerate at a bound (stage t=%d)", s, t)
                flags.append((s, t))
            stage_fitter(s, t, kind, names, X)
        for tr in tracks.values():
            tr.preds[s] = tr.chain
            tr.q_next = np.where(ds.deterministic(s), 1.0, expit(tr.eta))
    return flags


def _extend(tr, fit, names, X):
    off = np.clip(tr.eta, -ETA_CLIP, ETA_CLIP)
    tr.eta = off + fit.decision(X)
    tr.chain = tr.chain.extended(Term(fit, names, clip_before=True))


def _finish(name, ds, t0, track, propensity, tag, diag, level):
    K = ds.K
    if t0 == 0:
        q0 = float(np.mean(track.q_next))
        qf = OutcomeRegressionFit(K, dict(track.preds), q0, {t: tag for t in track.preds})
        terms, extra = _targeting_diagnostics(ds, qf, propensity)
        diag.update(extra)
        ic = InfluenceCurve(terms.sum(axis=1), terms)
        return EstimatorReport(name, q0, ic.values, ic.se, wald_ci(q0, ic, level), qf, diag)
    qf = OutcomeRegressionFit(K, dict(track.preds), float("nan"), {t: tag for t in track.preds})
    diag.setdefault("score_resid", float("nan"))
    diag.setdefault("trunc_count", getattr(propensity, "trunc_count", 0))
    return EstimatorReport(name, float("nan"), None, float("nan"), NAN_CI, qf, diag)


def itmle(ds: LongitudinalDataset, propensity, q_learners, scenario=None, *, t0: int = 0,
          targeting=None, init: str = "learner", seed: int = 0, level: float = 0.95) -> EstimatorReport:
    """iTMLE estimate of ``Q_{t0}`` (and of ``Q_0`` when ``t0 = 0``).

    ``targeting`` gives the class fitted at each targeting step (one plan or a
    mapping ``t -> plan``); by default it is the outcome-regression plan for
    time ``t``.  With ``init="learner"`` the first step for ``Q_s`` is the
    outcome learner for time ``s`` with no offset; with ``init="half"`` the
    chain starts from ``Q = 1/2`` and that step uses the targeting class.
    """
    _check(ds, t0, init)
    targeting = q_learners if targeting is None else targeting
    track = _Track(propensity.table(ds), np.asarray(ds.outcome, dtype=float))
    tracks = {"full": track}

    def fitter(s, t, kind, names, X):
        plan = {"intercept": INTERCEPT, "learner": plan_for(q_learners, s)}.get(kind)
        if plan is None:
            plan = plan_for(targeting, t)
        rows = track.w > 0
        if not rows.any():
            raise EstimationError(f"no units with positive weight at stage ({s}, {t})")
        off = np.clip(track.eta, -ETA_CLIP, ETA_CLIP)
        try:
            fit = fit_plan(plan, X[rows], track.q_next[rows], track.w[rows], off[rows],
                           loss="logistic", seed=stage_seed(seed, 3, s, t))
        except FitError as exc:
            raise EstimationError(f"targeting fit failed at stage ({s}, {t}): {exc}") from exc
        _extend(track, fit, names, X)

    flags = _run(ds, t0, tracks, fitter, scenario, init)
    diag = {"degenerate": flags}
    return _finish("itmle", ds, t0, track, propensity, f"iTMLE-stage-{t0}", diag, level)


def cv_itmle(ds: LongitudinalDataset, q_learners, targeting, scenario=None, *, t0: int = 0,
             partition: CvPartition | None = None, V: int = 5, ensemble: str = "convex",
             propensity_learner=None, delta: float = 0.01, init: str = "learner",
             grid_resolution: int = 10, seed: int = 0, level: float = 0.95) -> EstimatorReport:
    """Cross-validated iTMLE.

    Treatment mechanisms and the whole targeting chain are re-estimated
    without each validation fold.  At every step the candidate (``ensemble =
    "discrete"``) or convex combination of candidates (``"convex"``) with the
    smallest cross-validated weighted cross-entropy is chosen, using the
    fold-specific outcome, offset and weights.  The chosen step is then fitted
    on all units within a full-data chain, which supplies the returned fit.
    """
    _check(ds, t0, init)
    if ensemble not in ("discrete", "convex"):
        raise ValueError("ensemble must be 'discrete' or 'convex'")
    if partition is None:
        if V < 2:
            raise ValueError("fold count ≥ 2 required")
        partition = make_partition(ds.n, V, stage_seed(seed, 4))
    if partition.n != ds.n:
        raise ValueError("partition size does not match the data")
    glearner = LOGISTIC if propensity_learner is None else propensity_learner
    full_pi = fit_propensities(ds, scenario, glearner, delta, seed=seed)
    y = np.asarray(ds.outcome, dtype=float)
    tracks = {"full": _Track(full_pi.table(ds), y.copy())}
    for v in range(partition.V):
        pv = fit_propensities(ds.subset(partition.train(v)), scenario, glearner, delta, seed=seed)
        tracks[v] = _Track(pv.table(ds), y.copy())
    folds = list(range(partition.V))
    choices = {}

    def fitter(s, t, kind, names, X):
        if kind == "intercept":
            cands = [INTERCEPT]
        elif kind == "learner":
            cands = plan_candidates(plan_for(q_learners, s))
        else:
            plan = plan_for(targeting, t)
            cands = list(plan) if isinstance(plan, (list, tuple)) else plan_candidates(plan)
        offs = {k: np.clip(tr.eta, -ETA_CLIP, ETA_CLIP) for k, tr in tracks.items()}
        if len(cands) == 1:
            weights = np.ones(1)
            fold_fits = None
        else:
            problems = [Problem(X, tracks[v].q_next, tracks[v].w, offs[v]) for v in folds]
            cv = cross_validate(cands, problems, partition, "logistic")
            if ensemble == "discrete":
                weights = np.eye(len(cands))[cv.index]
            else:
                weights = fit_convex_ensemble(cands, problems, partition, "logistic",
                                              grid_resolution, cv=cv).weights
            fold_fits = cv.fold_fits
            choices[(s, t)] = {"candidates": [str(c) for c in cands], "weights": weights.tolist(),
                               "risks": cv.risks.tolist()}
        keep = np.flatnonzero(weights > 0)
        for k, tr in tracks.items():
            if k == "full":
                rows = tr.w > 0
            else:
                rows = partition.train(k) & (tr.w > 0)
            if fold_fits is not None and k != "full":
                fit = EnsembleFit([fold_fits[k][m] for m in keep], weights[keep])
            else:
                members = []
                for m in keep:
                    try:
                        members.append(fit_plan(cands[m], X[rows], tr.q_next[rows], tr.w[rows],
                                                offs[k][rows], loss="logistic"))
                    except FitError as exc:
                        raise EstimationError(f"fit failed at stage ({s}, {t}): {exc}") from exc
                fit = EnsembleFit(members, weights[keep])
            _extend(tr, fit, names, X)

    flags = _run(ds, t0, tracks, fitter, scenario, init)
    diag = {"degenerate": flags, "selection": choices, "V": partition.V}
    return _finish("cv_itmle", ds, t0, tracks["full"], full_pi, f"iTMLE-stage-{t0}", diag, level)
