import itertools

import numpy as np
import pytest
from conftest import true_propensity
from scipy.special import logit

from sdrg import diagnostics as dg
from sdrg.estimators import itmle
from sdrg.learners import SATURATED
from sdrg.sim import discrete_oracle


def brute_expectation(dgp, t, h_t, s, fn, stop_before_last_a=False):
    """Sum over explicit continuations (l_{t+1}, a_{t+1}, ..., l_s, a_s) from a treated ``h_t``.

    ``fn(hs, a)`` receives the treated-history indices ``hs[r]`` for ``r = t..s``
    and the treatment values ``a[r]``.  Every path probability is a product of
    covariate and treatment probabilities; untreated paths are kept.
    """
    total = 0.0
    last = s - 1 if stop_before_last_a else s
    steps = s - t
    for ls in itertools.product(*[range(dgp.sizes[r - 1]) for r in range(t + 1, s + 1)]):
        for a in itertools.product((0, 1), repeat=max(last - t, 0)):
            prob, h, hs, avals, alive = 1.0, h_t, {t: h_t}, {}, True
            for k in range(steps):
                r = t + 1 + k
                if not alive:
                    # once untreated the weight is zero; probability mass no longer matters
                    break
                prob *= dgp.p_l[r - 1][h][ls[k]]
                h = h * dgp.sizes[r - 1] + ls[k]
                hs[r] = h
                if r <= last:
                    p1 = dgp.exact_pi(r)[h]
                    avals[r] = a[k]
                    prob *= p1 if a[k] else 1 - p1
                    alive = bool(a[k])
            if alive:
                total += prob * fn(hs, avals)
    return total


def brute_next(dgp, s, h_s, q_next):
    """E[Qhat_{s+1} | h_s, A_s = 1] with the outcome law at s = K."""
    if s == dgp.K:
        return float(dgp.p_y[h_s] @ dgp.y_values)
    m = dgp.sizes[s]
    return float(sum(dgp.p_l[s][h_s][l] * q_next[h_s * m + l] for l in range(m)))


def brute_drift(dgp, q_hat, pi_hat, s, t):
    out = []
    for h_t in range(dgp.n_hist(t)):
        def fn(hs, a):
            w = np.prod([a[r] / pi_hat[r][hs[r]] for r in range(t + 1, s + 1)])
            return w * (brute_next(dgp, s, hs[s], q_hat.get(s + 1)) - q_hat[s][hs[s]])
        out.append(-brute_expectation(dgp, t, h_t, s, fn))
    return np.array(out)


def brute_remainder(dgp, q_hat, pi_hat, s, t):
    q_true = dgp.exact_q(s)
    out = []
    for h_t in range(dgp.n_hist(t)):
        def fn(hs, a):
            w = np.prod([a[r] / pi_hat[r][hs[r]] for r in range(t + 1, s)])
            h = hs[s]
            return w * (1 - dgp.exact_pi(s)[h] / pi_hat[s][h]) * (q_hat[s][h] - q_true[h])
        out.append(brute_expectation(dgp, t, h_t, s, fn, stop_before_last_a=True))
    return np.array(out)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_terms_match_path_enumeration(seed):
    dgp = discrete_oracle(2, "default", seed)
    q_hat, pi_hat = dg.perturbed_tables(dgp, seed + 10)
    for t in (0, 1, 2):
        q_hat_t = q_hat[t] if t else np.atleast_1d(q_hat[0])
        terms = dg.expansion_terms(dgp, q_hat, pi_hat, t)
        total = np.zeros(dgp.n_hist(t))
        for s in range(t, 3):
            d = brute_drift(dgp, q_hat, pi_hat, s, t)
            assert np.max(np.abs(terms.D[s] - d)) < 1e-12
            total += d
        for s in range(t + 1, 3):
            r = brute_remainder(dgp, q_hat, pi_hat, s, t)
            assert np.max(np.abs(terms.Rem[s] - r)) < 1e-12
            total += r
        # the expansion identity, assembled from the brute-force terms alone
        assert np.max(np.abs(q_hat_t - dgp.exact_q(t) - total)) < 1e-12


@pytest.mark.parametrize("K,seed", [(1, 3), (2, 4), (3, 5)])
def test_expansion_identity_on_perturbations(K, seed):
    dgp = discrete_oracle(K, "rich" if K < 3 else "binary", seed)
    q_hat, pi_hat = dg.perturbed_tables(dgp, seed)
    for t in range(K + 1):
        assert dg.verify_expansion(dgp, q_hat, pi_hat, t) <= 1e-10


def test_exact_nuisances_give_zero_terms():
    dgp = discrete_oracle(2, "default", 1)
    q_hat, pi_hat = dg.exact_tables(dgp)
    terms = dg.expansion_terms(dgp, q_hat, pi_hat, 1)
    for v in list(terms.D.values()) + list(terms.Rem.values()):
        assert np.max(np.abs(v)) < 1e-15


def test_exact_propensity_kills_remainder():
    dgp = discrete_oracle(2, "default", 2)
    q_hat, _ = dg.perturbed_tables(dgp, 7)
    pi_hat = dg.exact_tables(dgp)[1]
    terms = dg.expansion_terms(dgp, q_hat, pi_hat, 0)
    assert all(np.max(np.abs(r)) == 0 for r in terms.Rem.values())


def test_zero_propensity_rejected():
    dgp = discrete_oracle(2, "binary", 0)
    q_hat, pi_hat = dg.exact_tables(dgp)
    pi_hat[2] = pi_hat[2].copy()
    pi_hat[2][0] = 0.0
    with pytest.raises(dg.DiagnosticError, match="SP violated"):
        dg.expansion_terms(dgp, q_hat, pi_hat, 0)


def test_remainder_needs_later_time():
    dgp = discrete_oracle(1, "binary", 0)
    with pytest.raises(dg.DiagnosticError):
        dg.remainder(dgp, *dg.exact_tables(dgp), 1, 1)


def test_fault_hook_breaks_identity():
    dgp = discrete_oracle(2, "binary", 0)
    q_hat, pi_hat = dg.perturbed_tables(dgp, 1)
    assert dg.verify_expansion(dgp, q_hat, pi_hat, 0, fault=(2, 0)) == pytest.approx(1e-3, rel=1e-6)


def test_dr_conditional_mean_with_exact_nuisances():
    dgp = discrete_oracle(3, "rich", 4)
    q_hat, pi_hat = dg.exact_tables(dgp)
    for t in range(1, 4):
        assert np.max(np.abs(dg.dr_conditional_mean(dgp, q_hat, pi_hat, t) - dgp.exact_q(t))) < 1e-12


def test_dr_conditional_mean_robust_to_one_nuisance():
    dgp = discrete_oracle(2, "default", 5)
    q_bad, pi_bad = dg.perturbed_tables(dgp, 2)
    q_ok, pi_ok = dg.exact_tables(dgp)
    # correct later regressions with wrong propensities, and the reverse
    assert np.max(np.abs(dg.dr_conditional_mean(dgp, q_ok, pi_bad, 1) - dgp.exact_q(1))) < 1e-12
    q_mixed = {**q_ok, 2: q_bad[2]}
    assert np.max(np.abs(dg.dr_conditional_mean(dgp, q_mixed, pi_ok, 1) - dgp.exact_q(1))) < 1e-12


def test_propagation_bound_vanishes_along_sequence():
    dgp = discrete_oracle(2, "default", 6)
    q_bad, pi_bad = dg.perturbed_tables(dgp, 3)
    rng = np.random.default_rng(0)
    noise_pi = rng.standard_normal(pi_bad[2].shape)
    noise_q = rng.standard_normal(q_bad[1].shape)
    lhs, bounds = [], []
    for lam in (0.1, 0.01, 0.001):
        # time 2: the regression stays wrong, its propensity converges
        pi_hat = {1: dgp.exact_pi(1), 2: np.clip(dgp.exact_pi(2) + lam * noise_pi, 0.05, 1)}
        q_hat = {2: q_bad[2], 1: q_bad[1]}
        # time 1: pick Qhat_1 so that the total drift is lam * noise
        d = dg.expansion_terms(dgp, q_hat, pi_hat, 1).D_total
        q_hat[1] = q_hat[1] - d + lam * noise_q
        res = dg.propagation_bound(dgp, q_hat, pi_hat, 1)
        assert res["D_norm"][1] == pytest.approx(dg.expansion_terms(dgp, q_hat, pi_hat, 1).norm(lam * noise_q))
        lhs.append(res["lhs"])
        bounds.append(res["bound"])
    assert bounds[0] > bounds[1] > bounds[2] and lhs[0] > lhs[1] > lhs[2]
    assert bounds[2] < 0.02 * bounds[0] and lhs[2] < 0.02 * lhs[0]


# -- excess risk -----------------------------------------------------------------

def stage_inputs(dgp, seed, s, t):
    q_hat, pi_hat = dg.perturbed_tables(dgp, seed)
    q_next = q_hat.get(s + 1) if s < dgp.K else None
    return q_next, logit(q_hat[s]), pi_hat


@pytest.mark.parametrize("s,t", [(2, 2), (2, 1), (2, 0), (1, 0)])
def test_population_step_has_zero_excess_and_drift(s, t):
    dgp = discrete_oracle(2, "binary", 1)
    q_next, offset, pi_hat = stage_inputs(dgp, 4, s, t)
    eps = dg.population_epsilon(dgp, s, t, q_next, offset, pi_hat)
    risk = dg.excess_risk(dgp, s, t, q_next, offset, eps, pi_hat, eps_bar=eps)
    assert np.all(risk.excess == 0) and np.max(np.abs(risk.drift)) < 1e-10
    assert risk.holds


def test_no_step_from_wrong_start_has_positive_excess():
    dgp = discrete_oracle(2, "binary", 1)
    q_next, offset, pi_hat = stage_inputs(dgp, 4, 2, 1)
    risk = dg.excess_risk(dgp, 2, 1, q_next, offset, np.zeros(dgp.n_hist(1)), pi_hat)
    assert risk.total > 0 and np.all(risk.excess >= 0)
    assert risk.holds and risk.ratio <= risk.constant


def test_excess_risk_is_quadratic_near_minimum():
    dgp = discrete_oracle(2, "binary", 2)
    q_next, offset, pi_hat = stage_inputs(dgp, 5, 2, 1)
    eps = dg.population_epsilon(dgp, 2, 1, q_next, offset, pi_hat)
    e1 = dg.excess_risk(dgp, 2, 1, q_next, offset, eps + 1e-2, pi_hat).total
    e2 = dg.excess_risk(dgp, 2, 1, q_next, offset, eps + 2e-2, pi_hat).total
    assert e2 / e1 == pytest.approx(4, rel=0.05)


def test_degenerate_pseudo_outcome_rejected():
    dgp = discrete_oracle(1, "binary", 0).with_outcome([0.0, 0.0])
    q_hat, pi_hat = dg.exact_tables(dgp)
    with pytest.raises(dg.DiagnosticError, match="degenerate"):
        dg.population_epsilon(dgp, 1, 1, None, np.zeros(dgp.n_hist(1)), pi_hat)


def test_fitted_steps_have_small_excess_risk():
    dgp = discrete_oracle(2, "binary", 0)
    n = 100_000
    ds = dgp.sample(n, 11)
    pi = true_propensity(dgp)
    rep = itmle(ds, pi, SATURATED, targeting=SATURATED)
    for s in (2, 1):
        for t in range(s, -1, -1):
            st = dg.itmle_stage(dgp, rep, pi, s, t)
            risk = dg.excess_risk(dgp, s, t, st["q_next"], st["offset"], st["eps_hat"], st["pi_hat"])
            assert risk.total < 10 / n, (s, t)
            assert risk.holds, (s, t)
