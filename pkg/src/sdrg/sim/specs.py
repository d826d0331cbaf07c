"""The two simulation designs as structural equation models."""
from __future__ import annotations

from .expr import Const, absolute, expit, indicator, ref
from .sem import Node, SemSpec

N01 = Const(0.0)


def sim1_spec() -> SemSpec:
    """Three time points, normal covariates, binary outcome at ``t = 3``."""
    L1, L2, L3 = ref("L1"), ref("L2"), ref("L3")
    A1, A2, A3 = ref("A1"), ref("A2"), ref("A3")
    nodes = (
        Node("L1", "normal", N01, "covariate", 1),
        Node("A1", "bernoulli", expit(L1), "treatment", 1),
        Node("Y1", "deterministic", Const(0.0)),
        Node("L2", "normal", N01, "covariate", 2),
        Node("A2", "bernoulli", expit(L2 + A1), "treatment", 2),
        Node("Y2", "deterministic", Const(0.0)),
        Node("L3", "normal", L1 * A2 + A1 * L2 + L2 * A2, "covariate", 3),
        Node("A3", "bernoulli", expit(L3 + A2), "treatment", 3),
        Node("Y3", "bernoulli", expit(L2 * A3 + A2 * L3 + L3 * A3), "outcome"),
    )
    return SemSpec("sim1", nodes, "3 time points, main-terms nuisance regressions")


SIM2_THRESHOLDS = {2: 0.9, 3: 0.85, 4: 0.80, 5: 0.80}


def sim2_spec() -> SemSpec:
    """Five time points with monotone switching away from ``A = 1``.

    ``W`` is drawn once at ``t = 1`` and treated as baseline.  The risk score
    ``Z_t`` is latent; its thresholded version ``R_t = 1{expit(Z_t) > c_t}``,
    which drives switching, is recorded as an observed covariate.
    """
    L = {t: ref(f"L{t}") for t in range(1, 6)}
    A = {t: ref(f"A{t}") for t in range(1, 6)}
    Y = {t: ref(f"Y{t}") for t in range(1, 6)}
    Z = {t: ref(f"Z{t}") for t in range(1, 6)}
    W = ref("W")
    nodes = [
        Node("U1", "normal", N01),
        Node("W", "normal", N01, "baseline"),
        Node("L1", "deterministic", absolute(ref("U1")), "covariate", 1),
        Node("Z1", "deterministic", L[1]),
        Node("A1", "bernoulli", expit(L[1]), "treatment", 1),
        Node("Y1", "deterministic", Const(0.0)),
    ]
    u_mean = {
        2: N01,
        3: A[1] * L[2] + L[2] * A[2],
        4: L[2] * A[3] + A[2] * L[3] + L[3] * A[3],
        5: L[2] * A[4] + A[2] * L[4] + L[4] * A[4],
    }
    for t in range(2, 6):
        z = (-2 + 0.5 * L[t - 1] + L[t]) if t < 5 else (
            -1 + 0.25 * L[4] + 0.5 * L[5] - 0.1 * L[5] * L[4] + 1.5 * W * L[4])
        switch = indicator(expit(Z[t]), SIM2_THRESHOLDS[t])
        base = 1.7 if t < 5 else 2.0
        if t == 2:
            y = expit(-3 + 0.5 * L[1] * A[2] + 0.5 * A[1] * L[2] + 0.5 * L[2] * A[2])
        elif t < 5:
            y = expit(-3 * Y[t - 1] + 0.5 * L[t - 1] * A[t] + 0.5 * A[t - 1] * L[t] + 0.5 * L[t] * A[t])
        else:
            y = expit(-Y[4] + A[5] + Z[5] * A[5] + 0.2 * A[4] * L[5])
        nodes += [
            Node(f"U{t}", "normal", u_mean[t]),
            Node(f"L{t}", "deterministic", absolute(ref(f"U{t}")), "covariate", t),
            Node(f"Z{t}", "deterministic", z),
            Node(f"R{t}", "deterministic", indicator(expit(Z[t]), SIM2_THRESHOLDS[t]), "covariate", t),
            Node(f"A{t}", "bernoulli", A[t - 1] * expit(base - 2.0 * switch), "treatment", t),
            Node(f"Y{t}", "bernoulli", y, "covariate" if t < 5 else "outcome", t + 1 if t < 5 else 0),
        ]
    return SemSpec("sim2", tuple(nodes), "5 time points, monotone switching, super-learner outcome regressions")


SPECS = {"sim1": sim1_spec, "sim2": sim2_spec}
