"""Structural equation models: specification, sampling and interventional truth.

Randomness is counter based.  Node ``j`` draws from its own Philox stream
keyed by ``(seed, j)`` and unit ``i`` consumes the ``i``-th 64-bit output, so
any partition of the units into chunks reproduces the same dataset.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtri

from ..data import LongitudinalDataset, from_arrays
from . import expr as E

KINDS = ("normal", "bernoulli", "deterministic")
ROLES = ("latent", "baseline", "covariate", "treatment", "outcome")


@dataclass(frozen=True)
class Node:
    """One structural equation.

    ``formula`` is the mean (normal), success probability (bernoulli) or value
    (deterministic).  ``time`` is the treatment index for treatment nodes and
    the covariate block in which the node is observed for covariates.
    """

    name: str
    kind: str
    formula: E.Expr
    role: str = "latent"
    time: int = 0
    sd: float = 1.0

    def to_dict(self):
        d = {"name": self.name, "kind": self.kind, "formula": self.formula.to_dict(),
             "role": self.role, "time": self.time}
        if self.kind == "normal":
            d["sd"] = self.sd
        return d


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class SemSpec:
    name: str
    nodes: tuple
    description: str = ""
    _order: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        seen = set()
        for node in self.nodes:
            if node.kind not in KINDS:
                raise SpecError(f"node {node.name}: unknown kind {node.kind!r}")
            if node.role not in ROLES:
                raise SpecError(f"node {node.name}: unknown role {node.role!r}")
            missing = node.formula.refs() - seen
            if missing:
                raise SpecError(f"node {node.name}: formula references undefined node(s) {sorted(missing)}")
            if node.name in seen:
                raise SpecError(f"duplicate node {node.name!r}")
            if node.role == "treatment" and node.kind == "normal":
                raise SpecError(f"treatment node {node.name} must be binary")
            seen.add(node.name)
        outs = [nd for nd in self.nodes if nd.role == "outcome"]
        if len(outs) != 1:
            raise SpecError("exactly one outcome node required")
        times = [nd.time for nd in self.nodes if nd.role == "treatment"]
        if times != list(range(1, len(times) + 1)):
            raise SpecError("treatment nodes must be ordered with times 1..K")
        # every covariate of block t is generated before A_t and after A_{t-1}
        pos = {nd.name: i for i, nd in enumerate(self.nodes)}
        tpos = {nd.time: pos[nd.name] for nd in self.nodes if nd.role == "treatment"}
        K = len(times)
        for nd in self.nodes:
            if nd.role == "covariate":
                if not 1 <= nd.time <= K:
                    raise SpecError(f"covariate {nd.name}: block {nd.time} outside 1..{K}")
                lo = tpos.get(nd.time - 1, -1)
                if not lo < pos[nd.name] < tpos[nd.time]:
                    raise SpecError(f"covariate {nd.name} is not generated between A{nd.time - 1} and A{nd.time}")
            if nd.role == "baseline" and K and pos[nd.name] > tpos[1]:
                raise SpecError(f"baseline node {nd.name} generated after A1")
        if K and pos[outs[0].name] < tpos[K]:
            raise SpecError("outcome generated before the last treatment")
        object.__setattr__(self, "_order", pos)

    @property
    def K(self) -> int:
        return sum(nd.role == "treatment" for nd in self.nodes)

    @property
    def outcome(self) -> Node:
        return next(nd for nd in self.nodes if nd.role == "outcome")

    def node(self, name: str) -> Node:
        return self.nodes[self._order[name]]

    def treatment(self, t: int) -> Node:
        return next(nd for nd in self.nodes if nd.role == "treatment" and nd.time == t)

    def intervene(self, value: float = 1.0) -> "SemSpec":
        """The model with every treatment node set deterministically to ``value``."""
        nodes = tuple(
            Node(nd.name, "deterministic", E.Const(value), nd.role, nd.time) if nd.role == "treatment" else nd
            for nd in self.nodes
        )
        return SemSpec(self.name + "[A=1]", nodes, self.description)

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "description": self.description,
                           "nodes": [nd.to_dict() for nd in self.nodes]}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SemSpec":
        d = json.loads(text)
        nodes = tuple(
            Node(x["name"], x["kind"], E.from_dict(x["formula"]), x.get("role", "latent"),
                 int(x.get("time", 0)), float(x.get("sd", 1.0)))
            for x in d["nodes"]
        )
        return cls(d["name"], nodes, d.get("description", ""))


def _seed_word(seed: int) -> int:
    return int(seed) & 0xFFFFFFFFFFFFFFFF


def uniforms(seed: int, stream: int, start: int, count: int) -> np.ndarray:
    """Open-interval uniforms for units ``start .. start+count-1`` of one stream."""
    bg = np.random.Philox(key=np.array([_seed_word(seed), stream], dtype=np.uint64))
    bg.advance(start // 4)
    skip = start % 4
    raw = bg.random_raw(count + skip)[skip:]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def sample_nodes(spec: SemSpec, n: int, seed: int, *, start: int = 0,
                 fixed: Mapping[str, np.ndarray] | None = None) -> dict:
    """Draw every node for units ``start .. start+n-1``.

    Nodes listed in ``fixed`` take the given values instead of being drawn.
    """
    env: dict = {}
    fixed = fixed or {}
    for j, node in enumerate(spec.nodes):
        if node.name in fixed:
            env[node.name] = np.broadcast_to(np.asarray(fixed[node.name], dtype=float), (n,)).copy()
            continue
        val = node.formula.evaluate(env, n)
        if node.kind == "deterministic":
            env[node.name] = np.array(val, dtype=float, copy=True)
            continue
        u = uniforms(seed, j, start, n)
        if node.kind == "normal":
            env[node.name] = val + node.sd * ndtri(u)
        else:
            env[node.name] = (u < val).astype(float)
    return env


def observed_layout(spec: SemSpec):
    """Names of the baseline columns and of each covariate block ``1..K``."""
    base = [nd.name for nd in spec.nodes if nd.role == "baseline"]
    blocks = [[nd.name for nd in spec.nodes if nd.role == "covariate" and nd.time == t] for t in range(1, spec.K + 1)]
    return base, blocks


def to_dataset(spec: SemSpec, env: Mapping[str, np.ndarray]) -> LongitudinalDataset:
    base, blocks = observed_layout(spec)
    n = len(env[spec.outcome.name])
    K = spec.K
    baseline = np.column_stack([env[b] for b in base]) if base else np.zeros((n, 0))
    covs = [np.column_stack([env[c] for c in blk]) if blk else np.zeros((n, 0)) for blk in blocks]
    treat = np.column_stack([env[spec.treatment(t).name] for t in range(1, K + 1)]) if K else np.zeros((n, 0))
    return from_arrays(baseline, covs, treat.astype(np.int8), env[spec.outcome.name],
                       baseline_names=base, covariate_names=blocks)


def sample(spec: SemSpec, n: int, seed: int, *, chunk: int | None = None) -> LongitudinalDataset:
    """Draw ``n`` i.i.d. units; identical for any ``chunk`` size."""
    if chunk is None or chunk >= n:
        return to_dataset(spec, sample_nodes(spec, n, seed))
    parts = [sample_nodes(spec, min(chunk, n - a), seed, start=a) for a in range(0, n, chunk)]
    env = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return to_dataset(spec, env)


def _outcome_mean(spec: SemSpec, env) -> np.ndarray:
    """Conditional mean of the outcome given its parents (Rao-Blackwellisation)."""
    n = len(next(iter(env.values()))) if env else 1
    return np.asarray(spec.outcome.formula.evaluate(env, n), dtype=float)


def truth_q0(spec: SemSpec, reps: int, seed: int, *, batch: int = 250_000) -> tuple[float, float]:
    """Monte Carlo mean outcome with every treatment set to one, and its MC standard error.

    The outcome draw is replaced by its conditional mean given the parents,
    which leaves the target unchanged and lowers the Monte Carlo error.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    iv = spec.intervene(1.0)
    total = 0.0
    total_sq = 0.0
    shift = None
    for a in range(0, reps, batch):
        m = min(batch, reps - a)
        env = sample_nodes(iv, m, seed, start=a)
        mu = _outcome_mean(iv, env)
        # shifting by the first draw keeps a constant outcome exact
        shift = float(mu.flat[0]) if shift is None else shift
        d = mu - shift
        total += float(d.sum())
        total_sq += float((d * d).sum())
    mean = total / reps
    var = max(total_sq / reps - mean * mean, 0.0) * reps / max(reps - 1, 1)
    return shift + mean, float(np.sqrt(var / reps))


def conditioning_nodes(spec: SemSpec) -> list[str]:
    """Nodes generated before ``A_1``: the variables ``Q_1`` conditions on."""
    names = []
    for nd in spec.nodes:
        if nd.role == "treatment":
            break
        names.append(nd.name)
    return names


def truth_q1(spec: SemSpec, eval_points: Mapping[str, np.ndarray], reps_per_point: int, seed: int,
             *, batch: int = 400_000) -> tuple[np.ndarray, np.ndarray]:
    """Per-point ``Q_1`` by conditional Monte Carlo under the intervention.

    ``eval_points`` maps every conditioning node (see :func:`conditioning_nodes`)
    to an array of point values.
    """
    cond = conditioning_nodes(spec)
    pts = {k: np.asarray(eval_points[k], dtype=float) for k in cond}
    m = len(pts[cond[0]]) if cond else 1
    iv = spec.intervene(1.0)
    values = np.empty(m)
    ses = np.empty(m)
    per_batch = max(1, batch // reps_per_point)
    for a in range(0, m, per_batch):
        idx = np.arange(a, min(a + per_batch, m))
        fixed = {k: np.repeat(v[idx], reps_per_point) for k, v in pts.items()}
        size = len(idx) * reps_per_point
        env = sample_nodes(iv, size, seed, start=a * reps_per_point, fixed=fixed)
        mu = _outcome_mean(iv, env).reshape(len(idx), reps_per_point)
        d = mu - mu[:, :1]
        values[idx] = mu[:, 0] + d.mean(axis=1)
        ses[idx] = d.std(axis=1, ddof=1) / np.sqrt(reps_per_point) if reps_per_point > 1 else 0.0
    return values, ses


def eval_points(spec: SemSpec, m: int, seed: int) -> tuple[dict, LongitudinalDataset]:
    """Draw ``m`` points from the marginal of the time-1 history.

    Returns the conditioning-node values and a dataset whose rows carry the
    same histories (later columns are a regular draw and are never used).
    """
    env = sample_nodes(spec, m, seed)
    return {k: env[k] for k in conditioning_nodes(spec)}, to_dataset(spec, env)


def node_names(spec: SemSpec, role: str) -> Sequence[str]:
    return [nd.name for nd in spec.nodes if nd.role == role]
