"""Command-line entry point: ``sdrg {reproduce,simulate,estimate,truth,diagnose}``.

Exit codes: 0 success, 1 failed invariant or exceeded failure budget,
2 configuration or input error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .data import DataError, read_csv, write_csv
from .estimators import (
    EstimationError,
    cv_itmle,
    direct_plugin,
    dr_transform,
    fit_propensities,
    ipw,
    itmle,
    ltmle,
)
from .learners import EMPTY, INTERCEPT, LOGISTIC, PRESETS, SATURATED
from .report import fmt, plot_summary, render_text, write_rows
from .sim import LABELS, SPECS, discrete_oracle, sample
from .sim.oracle import PRESETS as ORACLE_PRESETS
from .study import (
    DESK,
    ESTIMATORS,
    ROW_FIELDS,
    SUMMARY_FIELDS,
    FailureBudgetExceeded,
    StudyConfig,
    compute_truth,
    full_scale,
    run_study,
    summarize,
    workers_from_env,
)

log = logging.getLogger("sdrg")

REPORT_FIELDS = ("estimator", "Q0_hat", "se", "ci_lo", "ci_hi", "score_resid", "trunc_count")


class ConfigError(Exception):
    pass


def _csv_list(text):
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


# name -> (type, default); shared by flags and the config file
OPTIONS = {
    "sim": (str, None),
    "scenario": (_csv_list, None),
    "estimators": (_csv_list, None),
    "n": (int, None),
    "reps": (int, None),
    "seed": (int, 0),
    "delta": (float, 0.01),
    "V": (int, 5),
    "out": (str, "."),
    "workers": (int, None),
    "failure_budget": (int, 0),
    "learner": (str, "glm"),
}


def _add_common(p, names):
    for name in names:
        typ = OPTIONS[name][0]
        flag = "--" + name.replace("_", "-")
        p.add_argument(flag, dest=name, type=typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdrg", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value file ([sdrg] section); flags take precedence")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reproduce", help="replicate a simulation study")
    _add_common(p, ["sim", "scenario", "estimators", "n", "reps", "seed", "delta", "V", "out",
                    "workers", "failure_budget"])
    p.add_argument("--full-scale", action="store_true", help="use the full sample size and replication count")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--truth", help="alternative truth file")

    p = sub.add_parser("simulate", help="draw one dataset and write it as CSV")
    _add_common(p, ["sim", "n", "seed", "out"])

    p = sub.add_parser("estimate", help="run estimators on a CSV dataset")
    p.add_argument("data")
    _add_common(p, ["estimators", "seed", "delta", "V", "out", "learner"])

    p = sub.add_parser("truth", help="regenerate cached truth constants")
    _add_common(p, ["sim", "seed", "out"])
    p.add_argument("--mc-reps", type=int, default=10_000_000)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--reps-per-point", type=int, default=50_000)

    p = sub.add_parser("diagnose", help="exact identity and score checks on a discrete model")
    _add_common(p, ["sim", "n", "seed"])
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--preset", default="default")
    p.add_argument("--inject-fault", help="S,T: corrupt the remainder term Rem_S^T")
    return parser


def _merge(args) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = {k: v[1] for k, v in OPTIONS.items()}
    if args.config:
        cp = configparser.ConfigParser()
        if not cp.read(args.config):
            raise ConfigError(f"cannot read config file {args.config}")
        section = cp["sdrg"] if cp.has_section("sdrg") else cp[cp.default_section]
        for key, raw in section.items():
            key = key.replace("-", "_")
            name = "V" if key == "v" else key
            if name not in OPTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                cfg[name] = OPTIONS[name][0](raw)
            except ValueError:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    for name in OPTIONS:
        val = getattr(args, name, None)
        if val is not None:
            cfg[name] = val
    return cfg


# -- commands ----------------------------------------------------------------

def cmd_reproduce(args, cfg) -> int:
    sim = cfg["sim"] or "sim1"
    if sim not in SPECS:
        raise ConfigError(f"unknown simulation {sim!r}")
    n, reps = DESK[sim]
    scenarios = cfg["scenario"] or LABELS
    study = StudyConfig(
        sim=sim, scenarios=tuple(scenarios), n=n if cfg["n"] is None else cfg["n"],
        reps=reps if cfg["reps"] is None else cfg["reps"], seed=cfg["seed"],
        estimators=cfg["estimators"] or StudyConfig.estimators, delta=cfg["delta"], V=cfg["V"],
        workers=cfg["workers"] or workers_from_env(), failure_budget=cfg["failure_budget"],
        truth_path=args.truth,
    )
    if args.full_scale:
        study = full_scale(study)
    try:
        study.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rows, truth = run_study(study)
    summary = summarize(rows, truth["q0"])
    out = Path(cfg["out"])
    write_rows(rows, ROW_FIELDS, out / f"{sim}_replications.csv")
    write_rows(summary, SUMMARY_FIELDS, out / f"{sim}_summary.csv")
    print(f"# {sim}: n={study.n} reps={study.reps} seed={study.seed} Q0={fmt(truth['q0'])}")
    print(render_text(summary, SUMMARY_FIELDS))
    if not args.no_plots:
        for path in plot_summary(summary, out, stem=f"{sim}_summary"):
            print(f"# figure: {path}")
    return 0


def cmd_simulate(args, cfg) -> int:
    sim = cfg["sim"] or "sim1"
    if sim not in SPECS:
        raise ConfigError(f"unknown simulation {sim!r}")
    n = cfg["n"] if cfg["n"] is not None else DESK[sim][0]
    if n < 1:
        raise ConfigError("n must be positive")
    ds = sample(SPECS[sim](), n, cfg["seed"])
    out = Path(cfg["out"])
    path = out / f"{sim}_n{n}_seed{cfg['seed']}.csv" if out.suffix != ".csv" else out
    path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, path)
    print(path)
    return 0


def run_estimators(ds, names, learner, *, seed=0, delta=0.01, V=5) -> list[dict]:
    """One report row per estimator name, in the given order."""
    pi = fit_propensities(ds, None, learner, delta, seed=seed)
    library = [learner, INTERCEPT, EMPTY]
    runners = {
        "plugin": lambda: direct_plugin(ds, learner, seed=seed),
        "ipw": lambda: ipw(ds, pi),
        "ltmle": lambda: ltmle(ds, pi, learner, seed=seed),
        "dr_transform": lambda: dr_transform(ds, pi, learner, seed=seed),
        "itmle": lambda: itmle(ds, pi, learner, seed=seed),
        "cv_itmle": lambda: cv_itmle(ds, learner, library, V=V, delta=delta, propensity_learner=learner,
                                     seed=seed),
    }
    return [runners[name]().row() for name in names]


def cmd_estimate(args, cfg) -> int:
    names = cfg["estimators"] or ESTIMATORS
    bad = [e for e in names if e not in ESTIMATORS]
    if bad:
        raise ConfigError(f"unknown estimator {bad[0]!r}")
    if cfg["learner"] not in PRESETS:
        raise ConfigError(f"unknown learner {cfg['learner']!r}; choose from {', '.join(PRESETS)}")
    try:
        ds = read_csv(args.data)
    except (DataError, OSError) as exc:
        raise ConfigError(f"{args.data}: {exc}") from None
    rows = run_estimators(ds, names, PRESETS[cfg["learner"]], seed=cfg["seed"], delta=cfg["delta"], V=cfg["V"])
    if cfg["out"] in (".", "-"):
        print(",".join(REPORT_FIELDS))
        for row in rows:
            print(",".join(fmt(row[k]) for k in REPORT_FIELDS))
    else:
        print(write_rows(rows, REPORT_FIELDS, cfg["out"]))
    return 0


def cmd_truth(args, cfg) -> int:
    sims = [cfg["sim"]] if cfg["sim"] else list(SPECS)
    for sim in sims:
        if sim not in SPECS:
            raise ConfigError(f"unknown simulation {sim!r}")
    if args.mc_reps < 10**5:
        raise ConfigError("--mc-reps must be at least 100000")
    out = Path(cfg["out"]) if cfg["out"] != "." else Path(__file__).parent / "resources" / "truth.json"
    data = json.loads(out.read_text()) if out.exists() else {}
    for sim in sims:
        data[sim] = compute_truth(sim, reps=args.mc_reps, seed=cfg["seed"] or 20240, points=args.points,
                                  reps_per_point=args.reps_per_point)
        print(f"{sim}: Q0 = {fmt(data[sim]['q0'])} (MC {fmt(data[sim]['q0_mc'])}, "
              f"se {fmt(data[sim]['q0_se'])})")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(data, indent=1) + "\n")
    print(out)
    return 0


class _Checks:
    def __init__(self):
        self.failed = 0

    def __call__(self, name, value, limit, detail=""):
        ok = bool(np.isfinite(value) and value <= limit)
        self.failed += not ok
        extra = f"  {detail}" if detail else ""
        print(f"{'PASS' if ok else 'FAIL'}  {name:<34} {value:.3e} <= {limit:.0e}{extra}")
        return ok


def _locate_fault(dgp, q, p, t, fault):
    """Name the remainder terms at ``t`` that disagree with a direct recomputation."""
    terms = dg.expansion_terms(dgp, q, p, t, fault=fault)
    bad = [s for s, v in terms.Rem.items() if np.max(np.abs(v - dg.remainder(dgp, q, p, s, t))) > 1e-12]
    return ", ".join(f"offending (s,t)=({s},{t})" for s in bad)


def cmd_diagnose(args, cfg) -> int:
    if cfg["sim"] != "oracle":
        raise ConfigError("diagnose requires --sim oracle")
    if args.preset not in ORACLE_PRESETS:
        raise ConfigError(f"unknown oracle preset {args.preset!r}")
    fault = None
    if args.inject_fault:
        try:
            s, t = (int(x) for x in args.inject_fault.split(","))
        except ValueError:
            raise ConfigError("--inject-fault expects S,T") from None
        if not 0 <= t < s <= args.K:
            raise ConfigError(f"--inject-fault needs 0 <= T < S <= K={args.K}")
        fault = (s, t)
    try:
        dgp = discrete_oracle(args.K, args.preset, cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    check = _Checks()
    print(f"# oracle {dgp.name}: Q0 = {fmt(float(dgp.q_tables()[0][0]))}")

    q, p = dg.perturbed_tables(dgp, cfg["seed"])
    for t in range(dgp.K + 1):
        r = dg.verify_expansion(dgp, q, p, t, fault=fault)
        detail = _locate_fault(dgp, q, p, t, fault) if r > 1e-10 else ""
        check(f"expansion identity t={t}", r, 1e-10, detail)
    check("backward vs forward Q0", abs(float(dgp.q_tables()[0][0]) - dgp.forward_q0()), 1e-13)
    qe, pe = dg.exact_tables(dgp)
    dr = max(float(np.max(np.abs(dg.dr_conditional_mean(dgp, qe, pe, t) - qe[t]))) for t in range(dgp.K))
    check("DR pseudo-outcome unbiasedness", dr, 1e-12)

    n = cfg["n"] or 20_000
    ds = dgp.sample(n, cfg["seed"] + 1)
    pi = fit_propensities(ds, None, SATURATED)
    try:
        lt = ltmle(ds, pi, LOGISTIC, seed=cfg["seed"])
        it = itmle(ds, pi, LOGISTIC, targeting=SATURATED, seed=cfg["seed"])
        plans = {name: f(ds, pi) for name, f in {
            "plugin": lambda d, g: direct_plugin(d, SATURATED),
            "ltmle": lambda d, g: ltmle(d, g, SATURATED),
            "dr_transform": lambda d, g: dr_transform(d, g, SATURATED),
            "itmle": lambda d, g: itmle(d, g, SATURATED),
        }.items()}
    except EstimationError as exc:
        print(f"FAIL  estimation: {exc}")
        return 1
    check("LTMLE estimating equation / n", lt.diagnostics["ee_resid"] / n, 1e-6)
    check("iTMLE max_t |P_n IF_t|", it.diagnostics["score_resid"], 1e-8)
    ests = [r.estimate for r in plans.values()]
    check("saturated estimators agree", max(ests) - min(ests), 1e-6,
          " ".join(f"{k}={v.estimate:.6f}" for k, v in plans.items()))

    worst = 0.0
    for s in range(dgp.K, 0, -1):
        for t in range(s, -1, -1):
            st = dg.itmle_stage(dgp, it, pi, s, t)
            risk = dg.excess_risk(dgp, s, t, st["q_next"], st["offset"], st["eps_hat"], st["pi_hat"])
            slack = risk.drift ** 2 - risk.bound * np.maximum(risk.excess, 0) * (1 + 1e-9) - 1e-13
            worst = max(worst, float(np.max(slack)))
            if not risk.holds:
                print(f"#   excess-risk bound violated at stage ({s},{t})")
    check("excess-risk bound violation", worst, 0.0)
    print(f"# {'FAIL' if check.failed else 'PASS'}: {check.failed} failed check(s)")
    return 1 if check.failed else 0


COMMANDS = {
    "reproduce": cmd_reproduce,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "truth": cmd_truth,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        cfg = _merge(args)
        if cfg["reps"] is not None and cfg["reps"] < 1:
            raise ConfigError("reps must be at least 1")
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"sdrg: config error: {exc}", file=sys.stderr)
        return 2
    except FailureBudgetExceeded as exc:
        print(f"sdrg: {exc}", file=sys.stderr)
        return 1
    except EstimationError as exc:
        print(f"sdrg: estimation failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
