"""Which covariates each nuisance regression may use.

A scenario assigns every outcome regression ``Q_t`` and treatment mechanism
``pi_t`` an allow-list of history columns.  ``None`` means the whole history.
A misspecified ``Q_t`` loses its key covariates; a misspecified ``pi_t`` sees
no covariates at all (intercept-only logistic regression).

Two drop policies exist for the simulation models.  ``"current"`` removes
``L_t`` and the baseline block.  ``"all"`` removes every covariate, leaving
only the treatment history (constant on the at-risk set, so the fit is
intercept-only).  Simulation 2 uses ``"all"``: its treatment decisions depend
on the observed switching indicators ``R_t``, and as long as a reduced
``Q_K`` regression still sees them, the errors of the wrong ``pi_t`` are
orthogonal to the error of ``Q_K`` and LTMLE stays consistent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

LABELS = ("Qc.gc", "Qi.gc", "Qc.gi", "Qi.gi", "QSDR.gSDR")


@dataclass(frozen=True)
class ScenarioSpec:
    label: str
    K: int
    q_columns: dict = field(default_factory=dict)
    g_columns: dict = field(default_factory=dict)

    def q_cols(self, t: int):
        return self.q_columns.get(t)

    def g_cols(self, t: int):
        return self.g_columns.get(t)

    def q_correct(self, t: int) -> bool:
        return self.q_columns.get(t) is None

    def g_correct(self, t: int) -> bool:
        return self.g_columns.get(t) is None


def wrong_times(label: str, K: int) -> tuple[set, set]:
    """Times at which ``Q_t`` and ``pi_t`` are misspecified under a named scenario."""
    every = set(range(1, K + 1))
    later = set(range(2, K + 1))
    table = {
        "Qc.gc": (set(), set()),
        "Qi.gc": (later, set()),
        "Qc.gi": (set(), every),
        "Qi.gi": (later, every),
        "QSDR.gSDR": ({K}, every - {K}),
    }
    if label not in table:
        raise ValueError(f"unknown scenario {label!r}; expected one of {', '.join(LABELS)}")
    return table[label]


def history_columns(baseline: Sequence[str], blocks: Sequence[Sequence[str]], t: int) -> list[str]:
    if t == 0:
        return []
    names = list(baseline)
    for s in range(1, t + 1):
        if s >= 2:
            names.append(f"A{s - 1}")
        names.extend(blocks[s - 1])
    return names


def make_scenario(label: str, baseline: Sequence[str], blocks: Sequence[Sequence[str]],
                  drop: Callable[[int], Iterable[str]]) -> ScenarioSpec:
    """Build a named scenario; ``drop(t)`` lists the columns a wrong ``Q_t`` omits."""
    K = len(blocks)
    q_wrong, g_wrong = wrong_times(label, K)
    q_cols = {}
    for t in sorted(q_wrong):
        gone = set(drop(t))
        q_cols[t] = tuple(c for c in history_columns(baseline, blocks, t) if c not in gone)
    g_cols = {t: () for t in sorted(g_wrong)}
    return ScenarioSpec(label, K, q_cols, g_cols)


DROP_POLICIES = ("current", "all")
DEFAULT_POLICY = {"sim1": "current", "sim2": "all"}


def sim_scenario(spec, label: str, policy: str | None = None) -> ScenarioSpec:
    """Scenario for a simulation model under a drop policy (default per model)."""
    from .sem import observed_layout

    policy = DEFAULT_POLICY.get(spec.name, "current") if policy is None else policy
    if policy not in DROP_POLICIES:
        raise ValueError(f"unknown drop policy {policy!r}")
    baseline, blocks = observed_layout(spec)
    if policy == "current":
        drop = lambda t: {f"L{t}", *baseline}  # noqa: E731
    else:
        treat = {f"A{s}" for s in range(1, len(blocks) + 1)}
        drop = lambda t: set(history_columns(baseline, blocks, t)) - treat  # noqa: E731
    return make_scenario(label, baseline, blocks, drop)


def custom_scenario(K: int, q_columns: dict | None = None, g_columns: dict | None = None,
                    label: str = "custom") -> ScenarioSpec:
    return ScenarioSpec(label, K, dict(q_columns or {}), dict(g_columns or {}))

