"""Fully discrete data-generating processes with exact enumeration.

Covariates ``L_t`` take integer codes ``0 .. m_t - 1`` and there is no
baseline block.  Histories of treated units are indexed in mixed radix:
``h_t = h_{t-1} * m_t + l_t``.  Along a treated path the conditional laws are
arbitrary tables; once a unit leaves treatment its remaining covariates,
treatments and outcome follow fixed history-free laws, which never enter the
always-treated G-formula.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..data import LongitudinalDataset, from_arrays

PI_RANGE = (0.2, 0.9)
MAX_SUPPORT = 10**6
PRESETS = ("binary", "default", "rich", "confounded")


@dataclass(frozen=True, eq=False)
class DiscreteDgp:
    K: int
    sizes: tuple
    p_l: tuple  # p_l[t-1]: (H_{t-1}, m_t) law of L_t given a treated history
    pi: tuple  # pi[t-1]: (H_t,) treatment probability
    p_y: np.ndarray  # (H_K, |y|)
    y_values: np.ndarray
    untreated_l: tuple
    untreated_y: np.ndarray
    name: str = "oracle"

    def n_hist(self, t: int) -> int:
        return int(np.prod(self.sizes[:t], dtype=np.int64)) if t > 0 else 1

    def cov_names(self) -> list[list[str]]:
        return [[f"L{t}"] for t in range(1, self.K + 1)]

    # -- exact quantities -------------------------------------------------
    def exact_pi(self, t: int) -> np.ndarray:
        if t == 0:
            return np.ones(1)
        return self.pi[t - 1].copy()

    def exact_q(self, t: int) -> np.ndarray:
        """``Q_t`` over treated histories ``h_t``; ``t = K+1`` gives the outcome grid."""
        if t == self.K + 1:
            return np.broadcast_to(self.y_values, self.p_y.shape).copy()
        return self.q_tables()[t]

    def q_tables(self) -> list[np.ndarray]:
        """Backward recursion ``Q_K, ..., Q_0`` (returned in time order)."""
        q = [None] * (self.K + 1)
        q[self.K] = self.p_y @ self.y_values
        for t in range(self.K - 1, -1, -1):
            m = self.sizes[t]
            q[t] = np.sum(self.p_l[t] * q[t + 1].reshape(-1, m), axis=1)
        return q

    def forward_q0(self) -> float:
        """``Q_0`` as a sum over complete treated paths (forward order)."""
        total = 0.0
        for path in itertools.product(*[range(m) for m in self.sizes]):
            prob, h = 1.0, 0
            for t, l in enumerate(path):
                prob *= self.p_l[t][h, l]
                h = h * self.sizes[t] + l
            total += prob * float(self.p_y[h] @ self.y_values)
        return total

    def history_prob(self, t: int, observed: bool = True) -> np.ndarray:
        """Probability of each treated ``h_t`` jointly with ``A_1 .. A_{t-1} = 1``.

        With ``observed=False`` the treatment factors are dropped (law under the
        intervention).
        """
        w = np.ones(1)
        for s in range(1, t + 1):
            if observed and s >= 2:
                w = w * self.pi[s - 2]
            w = (w[:, None] * self.p_l[s - 1]).reshape(-1)
        return w

    def codes(self, t: int) -> np.ndarray:
        """``(H_t, t)`` matrix of covariate codes for every treated history."""
        if t == 0:
            return np.zeros((1, 0), dtype=np.int64)
        grids = np.indices(self.sizes[:t]).reshape(t, -1).T
        return grids.astype(np.int64)

    def history_index(self, ds: LongitudinalDataset, t: int) -> np.ndarray:
        h = np.zeros(ds.n, dtype=np.int64)
        for s in range(1, t + 1):
            h = h * self.sizes[s - 1] + ds.covariates[s - 1][:, 0].astype(np.int64)
        return h

    # -- datasets ---------------------------------------------------------
    def support_dataset(self) -> LongitudinalDataset:
        """One row per complete treated path; the outcome column holds ``Q_K``."""
        c = self.codes(self.K).astype(float)
        n = c.shape[0]
        return from_arrays(
            None, [c[:, [t]] for t in range(self.K)], np.ones((n, self.K), dtype=np.int8),
            self.q_tables()[self.K], covariate_names=self.cov_names(),
        )

    def support_rows(self, t: int) -> np.ndarray:
        """Row of :meth:`support_dataset` representing each treated ``h_t``."""
        return np.arange(self.n_hist(t)) * (self.n_hist(self.K) // self.n_hist(t))

    def sample(self, n: int, seed: int) -> LongitudinalDataset:
        rng = np.random.default_rng(seed)
        L = np.zeros((n, self.K))
        A = np.zeros((n, self.K), dtype=np.int8)
        h = np.zeros(n, dtype=np.int64)
        treated = np.ones(n, dtype=bool)
        for t in range(1, self.K + 1):
            probs = np.where(treated[:, None], self.p_l[t - 1][np.where(treated, h, 0)],
                             self.untreated_l[t - 1][None, :])
            l = _categorical(probs, rng.random(n))
            L[:, t - 1] = l
            h = np.where(treated, h * self.sizes[t - 1] + l, 0)
            p = np.where(treated, self.pi[t - 1][h], 0.5)
            a = rng.random(n) < p
            A[:, t - 1] = a
            treated &= a
        py = np.where(treated[:, None], self.p_y[np.where(treated, h, 0)], self.untreated_y[None, :])
        y = self.y_values[_categorical(py, rng.random(n))]
        return from_arrays(None, [L[:, [t]] for t in range(self.K)], A, y, covariate_names=self.cov_names())

    def with_outcome(self, y_values) -> "DiscreteDgp":
        """Same law with relabelled outcome support (e.g. a constant outcome)."""
        y_values = np.asarray(y_values, dtype=float)
        if y_values.shape != self.y_values.shape:
            raise ValueError("outcome support size must not change")
        return DiscreteDgp(self.K, self.sizes, self.p_l, self.pi, self.p_y, y_values,
                           self.untreated_l, self.untreated_y, self.name)


def _categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    idx = np.sum(u[:, None] >= cdf[:, :-1], axis=1)
    return idx.astype(np.int64)


def _dirichlet_rows(rng, rows: int, m: int, alpha: float) -> np.ndarray:
    p = rng.dirichlet(np.full(m, alpha), size=rows)
    p = np.maximum(p, 1e-3)
    return p / p.sum(axis=1, keepdims=True)


def discrete_oracle(K: int, preset: str = "default", seed: int = 0) -> DiscreteDgp:
    """Seeded random discrete model.

    Presets: ``binary`` (binary covariates and outcome), ``default`` (three
    levels per covariate), ``rich`` (up to four levels, outcome in
    ``{0, 0.5, 1}``) and ``confounded`` (binary, strongly history-dependent
    treatment, used to separate sequential from global double robustness).
    """
    if not 1 <= K <= 4:
        raise ValueError("K must be in 1..4")
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    if preset == "confounded":
        return _confounded(K)
    rng = np.random.default_rng(seed)
    if preset == "binary":
        sizes, y_values, alpha = (2,) * K, np.array([0.0, 1.0]), 1.0
    elif preset == "default":
        sizes, y_values, alpha = (3,) * K, np.array([0.0, 1.0]), 1.0
    else:
        sizes = tuple(int(s) for s in rng.integers(2, 5, size=K))
        y_values, alpha = np.array([0.0, 0.5, 1.0]), 0.7
    if np.prod(sizes) * len(y_values) > MAX_SUPPORT:
        raise ValueError("support too large")
    H = np.cumprod((1,) + sizes)
    p_l = tuple(_dirichlet_rows(rng, int(H[t]), sizes[t], alpha) for t in range(K))
    lo, hi = PI_RANGE
    pi = tuple(lo + (hi - lo) * rng.beta(0.7, 0.7, size=int(H[t + 1])) for t in range(K))
    p_y = _dirichlet_rows(rng, int(H[K]), len(y_values), alpha)
    untreated_l = tuple(_dirichlet_rows(rng, 1, m, 2.0)[0] for m in sizes)
    untreated_y = _dirichlet_rows(rng, 1, len(y_values), 2.0)[0]
    return DiscreteDgp(K, sizes, p_l, pi, p_y, y_values, untreated_l, untreated_y, f"{preset}-K{K}-s{seed}")


def _confounded(K: int) -> DiscreteDgp:
    """Binary model whose treatment at ``t`` favours ``L_t == L_{t-1}``.

    The outcome depends on the last covariate, so dropping ``L_K`` from the
    last outcome regression induces a history-dependent bias that a scalar
    fluctuation cannot remove.
    """
    sizes = (2,) * K
    H = np.cumprod((1,) + sizes)
    p_l = tuple(np.tile([0.5, 0.5], (int(H[t]), 1)) for t in range(K))
    pi = []
    for t in range(K):
        codes = np.indices(sizes[: t + 1]).reshape(t + 1, -1).T
        if t == 0:
            p = np.where(codes[:, 0] == 1, 0.9, 0.2)
        else:
            p = np.where(codes[:, t] == codes[:, t - 1], 0.9, 0.2)
        pi.append(p.astype(float))
    last = np.indices(sizes).reshape(K, -1).T[:, -1]
    p1 = np.where(last == 1, 0.9, 0.1)
    p_y = np.column_stack([1 - p1, p1])
    return DiscreteDgp(K, sizes, p_l, tuple(pi), p_y, np.array([0.0, 1.0]),
                       tuple(np.array([0.5, 0.5]) for _ in range(K)), np.array([0.5, 0.5]), f"confounded-K{K}")
