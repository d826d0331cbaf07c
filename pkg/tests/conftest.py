import numpy as np
import pytest

from sdrg.data import from_arrays

# (criterion, verdict, measurement) lines collected by the acceptance module
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def toy_dataset(n=200, K=2, seed=0, p=0.7, baseline=True):
    """Small random dataset with one covariate per time and a binary outcome."""
    rng = np.random.default_rng(seed)
    L0 = rng.normal(size=(n, 1)) if baseline else None
    blocks, A = [], np.zeros((n, K), dtype=np.int8)
    for t in range(K):
        blocks.append(rng.normal(size=(n, 1)))
        A[:, t] = rng.random(n) < p
    lin = blocks[-1][:, 0] + (L0[:, 0] if baseline else 0)
    y = (rng.random(n) < 1 / (1 + np.exp(-lin))).astype(float)
    return from_arrays(L0, blocks, A, y)


@pytest.fixture
def toy():
    return toy_dataset()


def true_propensity(dgp, delta=0.0):
    """Exact treatment mechanism of a discrete model as a propensity object."""
    from sdrg.estimators import KnownPropensity

    return KnownPropensity(lambda ds, t: dgp.exact_pi(t)[dgp.history_index(ds, t)], dgp.K, delta)


def support_error(dgp, q_fit, t):
    """Root mean square error of a fitted ``Q_t`` over treated histories (observed law)."""
    sup = dgp.support_dataset()
    pred = q_fit.predict(sup, t)[dgp.support_rows(t)]
    prob = dgp.history_prob(t)
    return float(np.sqrt(np.sum(prob * (pred - dgp.exact_q(t)) ** 2) / np.sum(prob)))
