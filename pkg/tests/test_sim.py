import itertools

import numpy as np
import pytest

from sdrg.sim import (
    LABELS,
    Node,
    SemSpec,
    SpecError,
    custom_scenario,
    discrete_oracle,
    eval_points,
    sample,
    sim1_spec,
    sim2_spec,
    sim_scenario,
    truth_q0,
    truth_q1,
)
from sdrg.sim.expr import Const, expit, indicator, ref
from sdrg.study import load_truth


def tiny_spec(y=None):
    nodes = (
        Node("L1", "normal", Const(0.0), "covariate", 1),
        Node("A1", "bernoulli", expit(ref("L1")), "treatment", 1),
        Node("Y", "deterministic" if y is not None else "bernoulli",
             Const(y) if y is not None else expit(ref("L1") + ref("A1")), "outcome"),
    )
    return SemSpec("tiny", nodes)


# -- specification -------------------------------------------------------------

def test_undefined_reference_rejected():
    with pytest.raises(SpecError, match="undefined"):
        SemSpec("bad", (Node("A1", "bernoulli", expit(ref("L9")), "treatment", 1),
                        Node("Y", "deterministic", Const(0.0), "outcome")))


def test_single_outcome_required():
    with pytest.raises(SpecError, match="outcome"):
        SemSpec("bad", (Node("L1", "normal", Const(0.0), "covariate", 1),
                        Node("A1", "bernoulli", Const(0.5), "treatment", 1)))


def test_json_round_trip():
    for spec in (sim1_spec(), sim2_spec()):
        back = SemSpec.from_json(spec.to_json())
        a, b = sample(spec, 50, 3), sample(back, 50, 3)
        assert np.array_equal(a.treatment, b.treatment) and np.array_equal(a.outcome, b.outcome)


def test_sim1_outcome_formula():
    env = {"L2": np.array([0.3]), "L3": np.array([-1.1]), "A2": np.array([1.0]), "A3": np.array([1.0])}
    val = sim1_spec().outcome.formula.evaluate(env, 1)
    assert val[0] == pytest.approx(1 / (1 + np.exp(-(0.3 - 1.1 - 1.1))))


def test_sim2_treatment_formula_t2():
    node = sim2_spec().treatment(2)
    for z in (-1.0, 3.0):
        env = {"A1": np.array([1.0]), "Z2": np.array([z])}
        switch = float(1 / (1 + np.exp(-z)) > 0.9)
        assert node.formula.evaluate(env, 1)[0] == pytest.approx(1 / (1 + np.exp(-(1.7 - 2.0 * switch))))


def test_sim2_z5_has_w_interaction():
    spec = sim2_spec()
    z5 = spec.node("Z5").formula
    base = {"L4": np.array([2.0]), "L5": np.array([0.0]), "W": np.array([0.0])}
    shifted = dict(base, W=np.array([1.0]))
    assert z5.evaluate(shifted, 1)[0] - z5.evaluate(base, 1)[0] == pytest.approx(1.5 * 2.0)


# -- sampling ------------------------------------------------------------------

def test_sampling_is_reproducible_and_chunk_invariant():
    spec = sim2_spec()
    a = sample(spec, 1000, 42)
    b = sample(spec, 1000, 42, chunk=137)
    assert np.array_equal(a.treatment, b.treatment)
    assert np.array_equal(a.covariates[3], b.covariates[3])
    assert np.array_equal(a.outcome, b.outcome)
    c = sample(spec, 1000, 43)
    assert not np.array_equal(a.outcome, c.outcome)


def test_sim1_shape_and_symmetry():
    ds = sample(sim1_spec(), 500, 11)
    assert ds.K == 3
    a1 = ds.A(1)
    assert abs(a1.mean() - 0.5) < 4 * np.sqrt(0.25 / 500)


def test_sim1_deterministic_y1_is_zero():
    env_spec = sim1_spec()
    from sdrg.sim import sample_nodes

    env = sample_nodes(env_spec, 200, 5)
    assert np.all(env["Y1"] == 0) and np.all(env["Y2"] == 0)


def test_sim2_monotone_treatment():
    ds = sample(sim2_spec(), 5000, 1)
    assert np.all(np.diff(ds.treatment.astype(int), axis=1) <= 0)


# -- truth ---------------------------------------------------------------------

def test_truth_constant_outcome():
    mean, se = truth_q0(tiny_spec(0.3), 10**5, 0)
    assert mean == pytest.approx(0.3, abs=1e-15) and se == 0.0


def test_truth_matches_intervened_sample():
    spec = tiny_spec()
    mean, se = truth_q0(spec, 10**5, 1)
    env_mean = sample(spec.intervene(1.0), 10**5, 9).outcome.mean()
    assert abs(mean - env_mean) < 4 * np.sqrt(se ** 2 + 0.25 / 10**5)


def test_sim1_cached_truth_reproduces_with_new_seed():
    cached = load_truth("sim1")
    assert cached["q0_se"] < 2e-4
    mean, se = truth_q0(sim1_spec(), 10**6, 999)
    assert abs(mean - cached["q0"]) < 4 * np.hypot(se, cached["q0_se"])
    # the symmetric value and the Monte Carlo estimate agree
    assert abs(cached["q0_mc"] - 0.5) < 4 * cached["q0_se"]


def test_sim2_cached_truth_reproduces_with_new_seed():
    cached = load_truth("sim2")
    mean, se = truth_q0(sim2_spec(), 10**6, 4242)
    assert abs(mean - cached["q0"]) < 4 * np.hypot(se, cached["q0_se"])


def test_truth_q1_deterministic_continuation():
    pts = {"L1": np.array([-1.0, 0.5])}
    vals, ses = truth_q1(tiny_spec(0.8), pts, 50, 0)
    assert np.allclose(vals, 0.8) and np.all(ses == 0)


def test_truth_q1_closed_form_and_scaling():
    spec = tiny_spec()
    pts = {"L1": np.array([-1.0, 0.0, 2.0])}
    vals, ses = truth_q1(spec, pts, 40_000, 0)
    exact = 1 / (1 + np.exp(-(pts["L1"] + 1)))
    assert np.all(np.abs(vals - exact) <= 4 * np.maximum(ses, 1e-12) + 1e-12)
    # outcome mean is deterministic given L1 here, so use a model with noise downstream
    nodes = spec.nodes[:2] + (Node("L2", "normal", ref("L1"), "latent"),
                              Node("Y", "bernoulli", expit(ref("L2")), "outcome"))
    noisy = SemSpec("noisy", nodes)
    _, s1 = truth_q1(noisy, pts, 10_000, 1)
    _, s2 = truth_q1(noisy, pts, 20_000, 1)
    assert np.all(np.abs(s2 / s1 - 1 / np.sqrt(2)) < 0.2 / np.sqrt(2))


def test_eval_points_cover_time1_history():
    pts, ds = eval_points(sim2_spec(), 10, 3)
    assert set(pts) >= {"W", "L1"}
    assert np.allclose(ds.column("W"), pts["W"])


# -- scenarios -----------------------------------------------------------------

def test_sdr_scenario_structure():
    spec = sim2_spec()
    sc = sim_scenario(spec, "QSDR.gSDR")
    assert set(sc.q_columns) == {5}
    assert not sc.q_correct(5) and all(sc.q_correct(t) for t in range(1, 5))
    assert sc.g_correct(5) and all(sc.g_cols(t) == () for t in range(1, 5))
    # the wrong Q_5 regression sees only the treatment history
    assert set(sc.q_cols(5)) <= {"A1", "A2", "A3", "A4"}


def test_sim1_scenarios_drop_current_covariate():
    sc = sim_scenario(sim1_spec(), "Qi.gc")
    assert "L3" not in sc.q_cols(3) and "L2" in sc.q_cols(3)
    assert sc.q_correct(1)
    for label in LABELS:
        sim_scenario(sim1_spec(), label)
    with pytest.raises(ValueError):
        sim_scenario(sim1_spec(), "Qx.gx")


def test_custom_scenario():
    sc = custom_scenario(2, {2: ("L1",)}, {1: ()})
    assert sc.q_cols(2) == ("L1",) and sc.g_cols(1) == () and sc.g_correct(2)


# -- discrete oracle ------------------------------------------------------------

def test_oracle_support_count():
    dgp = discrete_oracle(1, "binary", 0)
    # L1 x A1 x Y
    assert dgp.sizes[0] * 2 * len(dgp.y_values) == 8


@pytest.mark.parametrize("preset", ["binary", "default", "rich", "confounded"])
def test_oracle_tables_are_laws(preset):
    dgp = discrete_oracle(3, preset, 5)
    for p in dgp.p_l:
        assert np.max(np.abs(p.sum(axis=1) - 1)) < 1e-14
    assert np.max(np.abs(dgp.p_y.sum(axis=1) - 1)) < 1e-14
    for t in range(1, 4):
        pi = dgp.exact_pi(t)
        assert pi.min() >= 0.2 - 1e-15 and pi.max() <= 0.9 + 1e-15


def brute_q0(dgp):
    """Sum over every observed path under the intervention (independent of the tables code)."""
    total = 0.0
    for path in itertools.product(*[range(m) for m in dgp.sizes]):
        prob, h = 1.0, 0
        for t, l in enumerate(path):
            prob *= dgp.p_l[t][h][l]
            h = h * dgp.sizes[t] + l
        total += prob * sum(p * y for p, y in zip(dgp.p_y[h], dgp.y_values))
    return total


@pytest.mark.parametrize("K", [1, 2, 3])
def test_backward_forward_agreement(K):
    dgp = discrete_oracle(K, "default", K)
    q0 = dgp.q_tables()[0][0]
    assert abs(q0 - dgp.forward_q0()) < 1e-13
    assert abs(q0 - brute_q0(dgp)) < 1e-13


def test_constant_outcome_oracle():
    dgp = discrete_oracle(2, "binary", 1).with_outcome([0.4, 0.4])
    for q in dgp.q_tables():
        assert np.allclose(q, 0.4, atol=1e-15)
    assert np.allclose(dgp.exact_q(3), 0.4)


def test_oracle_sample_matches_enumeration():
    dgp = discrete_oracle(2, "default", 2)
    ds = dgp.sample(200_000, 0)
    # IPW with the true treatment mechanism is unbiased for Q_0
    w = np.ones(ds.n)
    for t in (1, 2):
        h = dgp.history_index(ds, t)
        w = w * ds.A(t) / dgp.exact_pi(t)[h]
    est = np.mean(w * ds.outcome)
    se = np.std(w * ds.outcome) / np.sqrt(ds.n)
    assert abs(est - dgp.q_tables()[0][0]) < 4 * se
