"""Exact first-order expansion and excess-risk checks on discrete models.

Every quantity here is a finite sum over the enumerated treated histories of
a :class:`~sdrg.sim.oracle.DiscreteDgp`; nothing is estimated by simulation.
Estimates of ``Q_s`` and ``pi_s`` are passed as tables indexed by treated
history ``h_s`` (see :func:`tables_from_fit`).

For ``s >= t`` and a treated history ``h_t`` the drift term is

    D_s^t(h_t) = -E[ prod_{r=t+1}^s (A_r / pihat_r) (Qhat_{s+1} - Qhat_s) | h_t, A_t = 1 ]

and for ``s > t`` the remainder is

    Rem_s^t(h_t) = E[ prod_{r=t+1}^{s-1} (A_r / pihat_r) (1 - pi_s / pihat_s) (Qhat_s - Q_s) | h_t, A_t = 1 ].

The error of ``Qhat_t`` equals ``sum_s D_s^t + sum_{s>t} Rem_s^t`` exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .sim.oracle import MAX_SUPPORT, DiscreteDgp

NEWTON_TOL = 1e-12


class DiagnosticError(ValueError):
    pass


def _check(dgp: DiscreteDgp, t: int):
    if dgp.n_hist(dgp.K) > MAX_SUPPORT:
        raise DiagnosticError("support too large")
    if not 0 <= t <= dgp.K:
        raise DiagnosticError(f"t must lie in [0, {dgp.K}]")


def _check_pi(pi_hat: dict, times):
    for s in times:
        if np.any(np.asarray(pi_hat[s]) <= 0):
            raise DiagnosticError(f"SP violated: pihat_{s} has a zero value")


def descend(dgp: DiscreteDgp, r: int, values: np.ndarray) -> np.ndarray:
    """``h_{r-1} -> sum_l P(L_r = l | h_{r-1}) values(h_{r-1}, l)``."""
    m = dgp.sizes[r - 1]
    return np.sum(dgp.p_l[r - 1] * np.asarray(values).reshape(-1, m), axis=1)


def next_mean(dgp: DiscreteDgp, s: int, q_next) -> np.ndarray:
    """``E[Qhat_{s+1} | h_s, A_s = 1]``; at ``s = K`` this is the outcome mean."""
    if s == dgp.K:
        return dgp.p_y @ dgp.y_values
    return descend(dgp, s + 1, q_next)


def _ratio(dgp, pi_hat, r):
    return dgp.exact_pi(r) / np.asarray(pi_hat[r], dtype=float)


def drift(dgp: DiscreteDgp, q_hat: dict, pi_hat: dict, s: int, t: int) -> np.ndarray:
    """``D_s^t`` over treated ``h_t`` (``q_hat[K+1]`` is never needed)."""
    v = next_mean(dgp, s, q_hat.get(s + 1)) - np.asarray(q_hat[s], dtype=float)
    for r in range(s, t, -1):
        v = descend(dgp, r, _ratio(dgp, pi_hat, r) * v)
    return -v


def remainder(dgp: DiscreteDgp, q_hat: dict, pi_hat: dict, s: int, t: int) -> np.ndarray:
    """``Rem_s^t`` over treated ``h_t``, ``s > t``."""
    if s <= t:
        raise DiagnosticError("the remainder is defined for s > t only")
    q_true = dgp.exact_q(s)
    u = (1 - _ratio(dgp, pi_hat, s)) * (np.asarray(q_hat[s], dtype=float) - q_true)
    u = descend(dgp, s, u)
    for r in range(s - 1, t, -1):
        u = descend(dgp, r, _ratio(dgp, pi_hat, r) * u)
    return u


@dataclass
class ExpansionTerms:
    t: int
    D: dict
    Rem: dict
    prob: np.ndarray  # P(h_t, A_1 = ... = A_{t-1} = 1)
    residual: np.ndarray | None = None

    @property
    def D_total(self) -> np.ndarray:
        return sum(self.D.values())

    @property
    def Rem_total(self) -> np.ndarray:
        return sum(self.Rem.values()) if self.Rem else np.zeros_like(self.prob)

    def norm(self, values) -> float:
        """``L^2(P)`` norm over the treated histories at time ``t``."""
        return float(np.sqrt(np.sum(self.prob * np.asarray(values) ** 2)))

    def norms(self) -> dict:
        out = {("D", s): self.norm(v) for s, v in self.D.items()}
        out.update({("Rem", s): self.norm(v) for s, v in self.Rem.items()})
        out[("D", "total")] = self.norm(self.D_total)
        return out


def expansion_terms(dgp: DiscreteDgp, q_hat: dict, pi_hat: dict, t: int, *, fault=None) -> ExpansionTerms:
    """All ``D_s^t`` (``s = t..K``) and ``Rem_s^t`` (``s = t+1..K``).

    ``fault=(s, t)`` adds ``1e-3`` to that remainder; it exists so that the
    command-line checks can be shown to fail loudly.
    """
    _check(dgp, t)
    _check_pi(pi_hat, range(t + 1, dgp.K + 1))
    D = {s: drift(dgp, q_hat, pi_hat, s, t) for s in range(t, dgp.K + 1)}
    Rem = {s: remainder(dgp, q_hat, pi_hat, s, t) for s in range(t + 1, dgp.K + 1)}
    if fault is not None and fault[1] == t and fault[0] in Rem:
        Rem[fault[0]] = Rem[fault[0]] + 1e-3
    return ExpansionTerms(t, D, Rem, dgp.history_prob(t, observed=True))


def expansion_residuals(dgp: DiscreteDgp, q_hat: dict, pi_hat: dict, t: int, *, fault=None) -> np.ndarray:
    """Pointwise ``Qhat_t - Q_t - D^t - sum_s Rem_s^t`` over treated ``h_t``."""
    terms = expansion_terms(dgp, q_hat, pi_hat, t, fault=fault)
    q_t = np.asarray(q_hat[t], dtype=float) if t > 0 else np.atleast_1d(q_hat[0]).astype(float)
    return q_t - dgp.exact_q(t) - terms.D_total - terms.Rem_total


def verify_expansion(dgp: DiscreteDgp, q_hat: dict, pi_hat: dict, t: int, *, fault=None) -> float:
    """Largest absolute residual of the first-order expansion at time ``t``."""
    return float(np.max(np.abs(expansion_residuals(dgp, q_hat, pi_hat, t, fault=fault))))


def dr_conditional_mean(dgp: DiscreteDgp, q_hat: dict, pi_hat: dict, t: int) -> np.ndarray:
    """``E[Gamma_t | h_t, A_t = 1]`` for the doubly robust pseudo-outcome built from the tables."""
    _check(dgp, t)
    out = next_mean(dgp, t, q_hat.get(t + 1))
    for s in range(t + 1, dgp.K + 1):
        out = out - drift(dgp, q_hat, pi_hat, s, t)
    return out


def propagation_bound(dgp: DiscreteDgp, q_hat: dict, pi_hat: dict, t: int) -> dict:
    """Both sides of ``||Qhat_t - Q_t|| <= ||D^t|| + sum_{s>t} ||pihat_s - pi_s|| ||D^s||``.

    Constants are taken as one, so the bound is a diagnostic of the rate
    structure rather than a strict inequality.
    """
    _check(dgp, t)
    terms = {s: expansion_terms(dgp, q_hat, pi_hat, s) for s in range(t, dgp.K + 1)}
    q_t = np.asarray(q_hat[t], dtype=float)
    lhs = terms[t].norm(q_t - dgp.exact_q(t))
    d_norm = {s: terms[s].norm(terms[s].D_total) for s in terms}
    pi_err = {s: terms[s].norm(np.asarray(pi_hat[s]) - dgp.exact_pi(s)) for s in range(t + 1, dgp.K + 1)}
    bound = d_norm[t] + sum(pi_err[s] * d_norm[s] for s in pi_err)
    return {"lhs": lhs, "bound": bound, "D_norm": d_norm, "pi_err": pi_err}


# -- excess risk of a targeting step ------------------------------------------

def _stage_weights(dgp, pi_hat, s, t):
    """``omega(h_s)``: probability of reaching ``h_s`` from ``h_t`` times ``prod pi_r / pihat_r``."""
    w = np.ones(dgp.n_hist(t))
    for r in range(t + 1, s + 1):
        w = (w[:, None] * dgp.p_l[r - 1]).reshape(-1) * _ratio(dgp, pi_hat, r)
    return w


def _ancestor(dgp, s, t):
    return np.arange(dgp.n_hist(s)) // (dgp.n_hist(s) // dgp.n_hist(t))


def _risk(M, eta):
    # cross-entropy written with log-expit to stay accurate near the bounds
    return M * np.logaddexp(0.0, -eta) + (1 - M) * np.logaddexp(0.0, eta)


@dataclass
class StageRisk:
    s: int
    t: int
    eps_bar: np.ndarray
    excess: np.ndarray  # conditional excess risk per h_t
    drift: np.ndarray  # D_s^t(Qhat*_{s+1}, Qhat_s^t) per h_t
    bound: np.ndarray  # per-history constant C(h_t)
    prob: np.ndarray
    holds: bool = True
    details: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(np.sum(self.prob * self.excess))

    @property
    def ratio(self) -> float:
        """Largest observed ``D^2 / excess`` (0 when every excess is 0)."""
        ok = self.excess > 1e-300
        return float(np.max(self.drift[ok] ** 2 / self.excess[ok])) if ok.any() else 0.0

    @property
    def constant(self) -> float:
        return float(np.max(self.bound))


def population_epsilon(dgp: DiscreteDgp, s: int, t: int, q_next, offset, pi_hat: dict,
                       tol: float = NEWTON_TOL, max_iter: int = 200) -> np.ndarray:
    """Per-history minimiser of the conditional targeting risk (one Newton solve each)."""
    _check(dgp, t)
    _check_pi(pi_hat, range(t + 1, s + 1))
    M = next_mean(dgp, s, q_next)
    omega = _stage_weights(dgp, pi_hat, s, t)
    anc = _ancestor(dgp, s, t)
    live = omega > 0
    lo = np.bincount(anc[live], (M[live] > 0).astype(float), minlength=dgp.n_hist(t))
    hi = np.bincount(anc[live], (M[live] < 1).astype(float), minlength=dgp.n_hist(t))
    if np.any(lo == 0) or np.any(hi == 0):
        raise DiagnosticError("degenerate pseudo-outcome: all 0 or all 1 below some history")
    offset = np.asarray(offset, dtype=float)
    eps = np.zeros(dgp.n_hist(t))
    for _ in range(max_iter):
        q = expit(offset + eps[anc])
        g = np.bincount(anc, omega * (M - q), minlength=len(eps))
        h = np.bincount(anc, omega * q * (1 - q), minlength=len(eps))
        step = np.clip(g / h, -5.0, 5.0)
        eps = eps + step
        if np.max(np.abs(step)) < tol:
            break
    return eps


def excess_risk(dgp: DiscreteDgp, s: int, t: int, q_next, offset, eps_hat, pi_hat: dict,
                eps_bar=None) -> StageRisk:
    """Conditional excess risk of a fitted step and the pointwise drift bound.

    ``q_next`` is ``Qhat*_{s+1}`` over ``h_{s+1}`` (ignored at ``s = K``),
    ``offset`` the logit of ``Qhat_s^{t+1}`` over ``h_s`` and ``eps_hat`` the
    fitted step over ``h_t``.  The bound checked at every ``h_t`` is
    ``D^2 <= C(h_t) * excess`` with ``C = E[prod pi_r/pihat_r | h_t] / (2 pi_t)``,
    which follows from a mean-value argument and ``q (1 - q) <= 1/4``.
    """
    if eps_bar is None:
        eps_bar = population_epsilon(dgp, s, t, q_next, offset, pi_hat)
    M = next_mean(dgp, s, q_next)
    omega = _stage_weights(dgp, pi_hat, s, t)
    anc = _ancestor(dgp, s, t)
    n_t = dgp.n_hist(t)
    pi_t = dgp.exact_pi(t) if t > 0 else np.ones(1)
    offset = np.asarray(offset, dtype=float)
    eta_hat = offset + np.asarray(eps_hat, dtype=float)[anc]
    eta_bar = offset + eps_bar[anc]
    diff = _risk(M, eta_hat) - _risk(M, eta_bar)
    excess = pi_t * np.bincount(anc, omega * diff, minlength=n_t)
    d = -np.bincount(anc, omega * (M - expit(eta_hat)), minlength=n_t)
    C = np.bincount(anc, omega, minlength=n_t) / (2 * pi_t)
    holds = bool(np.all(d ** 2 <= C * np.maximum(excess, 0) * (1 + 1e-9) + 1e-13))
    return StageRisk(s, t, eps_bar, excess, d, C, dgp.history_prob(t, observed=True), holds)


# -- evaluation of fitted objects on the support -----------------------------

def tables_from_fit(dgp: DiscreteDgp, q_fit=None, propensity=None) -> tuple[dict, dict]:
    """Evaluate fitted ``Q_s`` and ``pi_s`` on every treated history."""
    sup = dgp.support_dataset()
    q_hat, pi_hat = {}, {}
    if q_fit is not None:
        q_hat[0] = np.atleast_1d(q_fit.q0).astype(float)
        for s in range(1, dgp.K + 1):
            if s in q_fit.predictors:
                q_hat[s] = q_fit.predict(sup, s)[dgp.support_rows(s)]
    if propensity is not None:
        for s in range(1, dgp.K + 1):
            pi_hat[s] = propensity.predict(sup, s)[dgp.support_rows(s)]
    return q_hat, pi_hat


def exact_tables(dgp: DiscreteDgp) -> tuple[dict, dict]:
    q = dgp.q_tables()
    return {s: q[s] for s in range(dgp.K + 1)}, {s: dgp.exact_pi(s) for s in range(1, dgp.K + 1)}


def perturbed_tables(dgp: DiscreteDgp, seed: int, scale: float = 0.5, pi_floor: float = 0.05) -> tuple[dict, dict]:
    """Seeded random estimates: logit-scale noise on ``Q_s``, additive noise on ``pi_s``."""
    rng = np.random.default_rng(seed)
    q_true, pi_true = exact_tables(dgp)
    q_hat = {}
    for s, q in q_true.items():
        base = logit(np.clip(q, 1e-6, 1 - 1e-6))
        q_hat[s] = expit(base + scale * rng.standard_normal(q.shape))
    pi_hat = {s: np.clip(p + scale * 0.4 * rng.standard_normal(p.shape), pi_floor, 1.0) for s, p in pi_true.items()}
    return q_hat, pi_hat


def itmle_stage(dgp: DiscreteDgp, report, propensity, s: int, t: int) -> dict:
    """Tables describing stage ``(s, t)`` of a fitted iTMLE run on a discrete model."""
    sup = dgp.support_dataset()
    chain = report.q_fit.predictors[s]
    k = s - t
    if k >= len(chain.terms):
        raise DiagnosticError(f"stage ({s}, {t}) not present in the fit")
    from .estimators.nuisance import ETA_CLIP

    eta = np.zeros(sup.n)
    for term in chain.terms[:k]:
        eta = np.clip(eta, -ETA_CLIP, ETA_CLIP) + term.value(sup)
    offset = np.clip(eta, -ETA_CLIP, ETA_CLIP)[dgp.support_rows(s)]
    eps_hat = chain.terms[k].value(sup)[dgp.support_rows(t)]
    q_next = None if s == dgp.K else report.q_fit.predict(sup, s + 1)[dgp.support_rows(s + 1)]
    _, pi_hat = tables_from_fit(dgp, None, propensity)
    return {"q_next": q_next, "offset": offset, "eps_hat": eps_hat, "pi_hat": pi_hat}
