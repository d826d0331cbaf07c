"""Monte Carlo replication harness for the two simulation models."""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .estimators import (
    EstimationError,
    SuperLearnerSpec,
    cv_itmle,
    direct_plugin,
    dr_transform,
    fit_propensities,
    ipw,
    itmle,
    ltmle,
)
from .learners import EMPTY, GBM_DEEP, GBM_MEDIUM, GBM_SHALLOW, INTERCEPT, LOGISTIC
from .sim import LABELS, SPECS, eval_points, sample, sim_scenario, truth_q0, truth_q1

log = logging.getLogger(__name__)

ESTIMATORS = ("plugin", "ipw", "ltmle", "dr_transform", "itmle", "cv_itmle")
DEFAULT_ESTIMATORS = ("plugin", "ipw", "ltmle", "dr_transform", "itmle")
ROW_FIELDS = ("rep", "estimator", "scenario", "seed", "n", "Q0_hat", "se", "ci_lo", "ci_hi",
              "score_resid", "trunc_count", "mse_q1", "status")
DESK = {"sim1": (500, 200), "sim2": (2000, 200)}
FULL = {"sim1": (500, 1000), "sim2": (5000, 1000)}
TARGET_LIBRARY = (GBM_SHALLOW, GBM_MEDIUM, GBM_DEEP, LOGISTIC, INTERCEPT, EMPTY)
# Under treat-all the Sim1 outcome logit is a linear form in centred normals,
# so its expit has mean exactly one half.
EXACT_Q0 = {"sim1": 0.5}


def learner_plans(sim: str) -> dict:
    """Outcome-regression plans per time, plus the CV-iTMLE targeting library."""
    if sim == "sim1":
        q = {t: LOGISTIC for t in range(1, 4)}
    elif sim == "sim2":
        sl = SuperLearnerSpec((GBM_SHALLOW, GBM_MEDIUM, GBM_DEEP, LOGISTIC), "discrete")
        q = {5: sl, 4: sl, 3: LOGISTIC, 2: LOGISTIC, 1: LOGISTIC}
    else:
        raise ValueError(f"unknown simulation {sim!r}")
    return {"q": q, "targeting": TARGET_LIBRARY}


# -- truth constants ---------------------------------------------------------

def _truth_file() -> Path:
    return Path(str(resources.files("sdrg") / "resources" / "truth.json"))


def load_truth(sim: str, path: str | Path | None = None) -> dict:
    p = Path(path) if path else _truth_file()
    data = json.loads(p.read_text())
    if sim not in data:
        raise KeyError(f"no cached truth for {sim!r}; run the truth command")
    return data[sim]


def compute_truth(sim: str, *, reps: int = 10_000_000, seed: int = 20240, points: int = 200,
                  reps_per_point: int = 50_000) -> dict:
    """Interventional ``Q_0`` and ``Q_1`` at evaluation points, with MC errors."""
    spec = SPECS[sim]()
    q0, q0_se = truth_q0(spec, reps, seed)
    pts, _ = eval_points(spec, points, seed + 1)
    q1, q1_se = truth_q1(spec, pts, reps_per_point, seed + 2)
    return {
        "q0": EXACT_Q0.get(sim, q0), "q0_mc": q0, "q0_se": q0_se, "reps": reps, "seed": seed,
        "eval_seed": seed + 1, "points": points, "reps_per_point": reps_per_point,
        "q1": q1.tolist(), "q1_se": q1_se.tolist(), "q1_seed": seed + 2,
    }


# -- one replication -----------------------------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    sim: str = "sim1"
    scenarios: tuple = ("Qc.gc",)
    n: int = 500
    reps: int = 200
    seed: int = 0
    estimators: tuple = DEFAULT_ESTIMATORS
    delta: float = 0.01
    V: int = 5
    workers: int = 1
    failure_budget: int = 0
    truth_path: str | None = None
    mse: bool = True  # evaluate MSE of Q_1 (costs an extra iTMLE run per replication)

    def validate(self):
        if self.sim not in SPECS:
            raise ValueError(f"unknown simulation {self.sim!r}")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.n < 10:
            raise ValueError("n must be at least 10")
        bad = [s for s in self.scenarios if s not in LABELS]
        if bad:
            raise ValueError(f"unknown scenario {bad[0]!r}")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise ValueError(f"unknown estimator {bad[0]!r}")
        if not 0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 0.5)")
        if self.V < 2:
            raise ValueError("fold count ≥ 2 required")


@dataclass
class _Context:
    cfg: StudyConfig
    eval_ds: object
    q1_true: np.ndarray
    plans: dict = field(default_factory=dict)


def _mse_q1(ctx, q_fit):
    if q_fit is None or 1 not in q_fit.predictors:
        return float("nan")
    pred = q_fit.predict(ctx.eval_ds, 1)
    return float(np.mean((pred - ctx.q1_true) ** 2))


def _run_one(ctx: _Context, scenario: str, r: int) -> list[dict]:
    cfg = ctx.cfg
    spec = SPECS[cfg.sim]()
    seed = cfg.seed ^ r
    ds = sample(spec, cfg.n, seed)
    sc = sim_scenario(spec, scenario)
    q = ctx.plans["q"]
    rows = []

    def emit(name, rep=None, mse=float("nan"), status="ok"):
        row = {"rep": r, "estimator": name, "scenario": scenario, "seed": seed, "n": cfg.n,
               "mse_q1": mse, "status": status}
        if rep is None:
            row.update({k: float("nan") for k in ("Q0_hat", "se", "ci_lo", "ci_hi", "score_resid")})
            row["trunc_count"] = 0
        else:
            base = rep.row()
            base.pop("estimator")
            row.update(base)
        rows.append({k: row[k] for k in ROW_FIELDS})

    try:
        pi = fit_propensities(ds, sc, LOGISTIC, cfg.delta, seed=seed)
    except EstimationError as exc:
        for name in cfg.estimators:
            emit(name, status=f"error: {exc}")
        return rows
    runners = {
        "plugin": lambda: direct_plugin(ds, q, sc, seed=seed),
        "ipw": lambda: ipw(ds, pi),
        "ltmle": lambda: ltmle(ds, pi, q, sc, seed=seed),
        "dr_transform": lambda: dr_transform(ds, pi, q, sc, seed=seed),
        "itmle": lambda: itmle(ds, pi, q, sc, seed=seed),
        "cv_itmle": lambda: cv_itmle(ds, q, ctx.plans["targeting"], sc, V=cfg.V, delta=cfg.delta, seed=seed),
    }
    for name in cfg.estimators:
        try:
            rep = runners[name]()
            if not cfg.mse:
                mse = float("nan")
            elif name == "itmle":
                # Q_1 is assessed with the run that targets Q_1 itself
                mse = _mse_q1(ctx, itmle(ds, pi, q, sc, t0=1, seed=seed).q_fit)
            elif name == "cv_itmle":
                mse = _mse_q1(ctx, cv_itmle(ds, q, ctx.plans["targeting"], sc, t0=1, V=cfg.V,
                                            delta=cfg.delta, seed=seed).q_fit)
            else:
                mse = _mse_q1(ctx, rep.q_fit)
            emit(name, rep, mse)
        except (EstimationError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("replication %d, %s failed: %s", r, name, exc)
            emit(name, status=f"error: {exc}")
    return rows


_CTX = None


def _init_worker(ctx):
    global _CTX
    _CTX = ctx


def _task(args):
    scenario, r = args
    return _run_one(_CTX, scenario, r)


def make_context(cfg: StudyConfig) -> tuple[_Context, dict]:
    truth = load_truth(cfg.sim, cfg.truth_path)
    spec = SPECS[cfg.sim]()
    _, eval_ds = eval_points(spec, truth["points"], truth["eval_seed"])
    return _Context(cfg, eval_ds, np.asarray(truth["q1"]), learner_plans(cfg.sim)), truth


class FailureBudgetExceeded(RuntimeError):
    pass


def run_study(cfg: StudyConfig) -> tuple[list[dict], dict]:
    """All replication rows in (scenario, replication, estimator) order, plus the truth record."""
    cfg.validate()
    ctx, truth = make_context(cfg)
    tasks = [(s, r) for s in cfg.scenarios for r in range(cfg.reps)]
    workers = max(1, int(cfg.workers))
    if workers == 1:
        chunks = [_run_one(ctx, s, r) for s, r in tasks]
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(ctx,)) as pool:
            chunks = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    rows = [row for chunk in chunks for row in chunk]
    failed = sum(1 for row in rows if row["status"] != "ok")
    if failed > cfg.failure_budget:
        raise FailureBudgetExceeded(f"{failed} failed estimator runs exceed the budget of {cfg.failure_budget}")
    return rows, truth


def workers_from_env(default: int = 1) -> int:
    raw = os.environ.get("SDRG_WORKERS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError("SDRG_WORKERS must be an integer") from None


# -- summary -------------------------------------------------------------------

SUMMARY_FIELDS = ("scenario", "estimator", "reps", "mean", "bias", "abs_bias", "mc_se", "rel_abs_bias",
                  "mse_q1", "rel_mse_q1", "coverage", "ci_length", "failures")


def summarize(rows: list[dict], q0: float) -> list[dict]:
    """Per scenario and estimator; relative columns divide by the best estimator of the panel."""
    out = []
    scenarios = list(dict.fromkeys(r["scenario"] for r in rows))
    for sc in scenarios:
        panel = []
        names = list(dict.fromkeys(r["estimator"] for r in rows if r["scenario"] == sc))
        for name in names:
            sub = [r for r in rows if r["scenario"] == sc and r["estimator"] == name]
            ok = [r for r in sub if r["status"] == "ok"]
            est = np.array([r["Q0_hat"] for r in ok], dtype=float)
            lo = np.array([r["ci_lo"] for r in ok], dtype=float)
            hi = np.array([r["ci_hi"] for r in ok], dtype=float)
            mse = np.array([r["mse_q1"] for r in ok], dtype=float)
            has_ci = np.isfinite(lo) & np.isfinite(hi)
            m = len(est)
            mean = float(est.mean()) if m else float("nan")
            panel.append({
                "scenario": sc, "estimator": name, "reps": m, "mean": mean, "bias": mean - q0,
                "abs_bias": abs(mean - q0),
                "mc_se": float(est.std(ddof=1) / math.sqrt(m)) if m > 1 else float("nan"),
                "mse_q1": float(np.mean(mse)) if m and np.all(np.isfinite(mse)) else float("nan"),
                "coverage": float(np.mean((lo <= q0) & (q0 <= hi))) if has_ci.any() else float("nan"),
                "ci_length": float(np.mean(hi - lo)) if has_ci.any() else float("nan"),
                "failures": len(sub) - m,
            })
        for key, rel in (("abs_bias", "rel_abs_bias"), ("mse_q1", "rel_mse_q1")):
            vals = [p[key] for p in panel if np.isfinite(p[key])]
            best = min(vals) if vals else float("nan")
            for p in panel:
                p[rel] = p[key] / best if vals and best > 0 else float("nan")
        out.extend({k: p[k] for k in SUMMARY_FIELDS} for p in panel)
    return out


def full_scale(cfg: StudyConfig) -> StudyConfig:
    n, reps = FULL[cfg.sim]
    return replace(cfg, n=n, reps=reps)
