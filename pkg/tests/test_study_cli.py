import json
import math

import numpy as np
import pytest
from conftest import toy_dataset

from sdrg.cli import main
from sdrg.data import write_csv
from sdrg.report import fmt, read_rows
from sdrg.study import (
    ROW_FIELDS,
    FailureBudgetExceeded,
    StudyConfig,
    load_truth,
    run_study,
    summarize,
)


def small(**kw):
    base = dict(sim="sim1", scenarios=("Qc.gc", "Qi.gi"), n=150, reps=3, seed=5,
                estimators=("plugin", "ipw", "itmle"), workers=1)
    base.update(kw)
    return StudyConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        small(V=1).validate()
    with pytest.raises(ValueError):
        small(estimators=("magic",)).validate()
    with pytest.raises(ValueError):
        small(scenarios=("Qx.gx",)).validate()


def test_study_rows_and_summary():
    rows, truth = run_study(small())
    assert len(rows) == 2 * 3 * 3 and all(r["status"] == "ok" for r in rows)
    assert truth["q0"] == 0.5
    summary = summarize(rows, truth["q0"])
    for s in summary:
        sub = [r["Q0_hat"] for r in rows if r["scenario"] == s["scenario"] and r["estimator"] == s["estimator"]]
        assert s["mean"] == pytest.approx(np.mean(sub))
        assert s["mc_se"] == pytest.approx(np.std(sub, ddof=1) / math.sqrt(3))
        assert np.isfinite(s["mse_q1"]) == (s["estimator"] != "ipw")
    for sc in ("Qc.gc", "Qi.gi"):
        assert min(s["rel_abs_bias"] for s in summary if s["scenario"] == sc) == 1.0


def test_parallel_rows_match_serial():
    a, _ = run_study(small(reps=2, mse=False))
    b, _ = run_study(small(reps=2, mse=False, workers=2))
    text = lambda rows: [[fmt(r[k]) for k in ROW_FIELDS] for r in rows]  # noqa: E731
    assert text(a) == text(b)


def test_failure_budget(monkeypatch):
    import sdrg.study as study

    def broken(*args, **kw):
        raise study.EstimationError("forced")

    monkeypatch.setattr(study, "fit_propensities", broken)
    rows, _ = run_study(small(reps=2, estimators=("ipw",), failure_budget=10))
    assert all(r["status"].startswith("error") for r in rows)
    with pytest.raises(FailureBudgetExceeded):
        run_study(small(reps=2, estimators=("ipw",), failure_budget=1))


def test_truth_lookup():
    t2 = load_truth("sim2")
    assert 0.6 < t2["q0"] < 0.62 and t2["q0_se"] < 2e-4
    assert len(t2["q1"]) == t2["points"]


# -- command line ------------------------------------------------------------------

REPRO = ["reproduce", "--sim", "sim1", "--scenario", "Qc.gc", "--n", "120", "--reps", "2",
         "--estimators", "plugin,ipw", "--workers", "1"]


def test_reproduce_outputs_are_byte_identical(tmp_path, capsys):
    for d in ("a", "b"):
        assert main(REPRO + ["--out", str(tmp_path / d), "--no-plots"]) == 0
    for name in ("sim1_replications.csv", "sim1_summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # the summary can be recomputed from the replication rows
    rows = read_rows(tmp_path / "a" / "sim1_replications.csv")
    again = summarize(rows, 0.5)
    saved = read_rows(tmp_path / "a" / "sim1_summary.csv")
    for x, y in zip(again, saved):
        for k, v in y.items():
            if isinstance(v, float):
                assert (math.isnan(v) and math.isnan(x[k])) or v == x[k]
            else:
                assert v == x[k]


def test_reproduce_draws_figures(tmp_path, capsys):
    assert main(REPRO + ["--out", str(tmp_path)]) == 0
    figs = sorted(p.name for p in tmp_path.glob("*.png"))
    assert figs and all(p.startswith("sim1_summary") for p in figs)
    assert "figure:" in capsys.readouterr().out


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[sdrg]\nsim = sim1\nn = 100\nreps = 2\nscenario = Qc.gc\nestimators = ipw\nworkers = 1\n")
    assert main(["--config", str(cfg), "reproduce", "--reps", "1", "--out", str(tmp_path), "--no-plots"]) == 0
    rows = read_rows(tmp_path / "sim1_replications.csv")
    assert len(rows) == 1 and rows[0]["n"] == 100


@pytest.mark.parametrize("argv", [
    ["reproduce", "--sim", "sim1", "--reps", "0"],
    ["reproduce", "--sim", "sim9"],
    ["reproduce", "--sim", "sim1", "--V", "1", "--reps", "1"],
    ["estimate", "/nonexistent.csv"],
    ["diagnose"],
    ["diagnose", "--sim", "sim1"],
])
def test_config_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[sdrg]\ncolour = blue\n")
    assert main(["--config", str(cfg), "reproduce"]) == 2


def test_simulate_then_estimate(tmp_path, capsys):
    assert main(["simulate", "--sim", "sim2", "--n", "10", "--seed", "3", "--out", str(tmp_path)]) == 0
    path = tmp_path / "sim2_n10_seed3.csv"
    assert path.exists()
    capsys.readouterr()
    assert main(["estimate", str(path), "--estimators", "plugin,ipw"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("estimator,Q0_hat") and len(lines) == 3


def test_estimate_is_deterministic(tmp_path, capsys):
    path = tmp_path / "toy.csv"
    write_csv(toy_dataset(n=150), path)
    outs = []
    for _ in range(2):
        assert main(["estimate", str(path), "--seed", "2", "--V", "3"]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1] and len(outs[0].splitlines()) == 7


def test_estimate_unknown_learner(tmp_path, capsys):
    path = tmp_path / "toy.csv"
    write_csv(toy_dataset(n=50), path)
    assert main(["estimate", str(path), "--learner", "forest"]) == 2


def test_truth_command_writes_file(tmp_path, capsys):
    out = tmp_path / "truth.json"
    assert main(["truth", "--sim", "sim1", "--mc-reps", "100000", "--points", "3",
                 "--reps-per-point", "200", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["sim1"]["q0"] == 0.5 and len(data["sim1"]["q1"]) == 3


def test_diagnose_passes(capsys):
    assert main(["diagnose", "--sim", "oracle", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS" in out


def test_diagnose_reports_injected_fault(capsys):
    assert main(["diagnose", "--sim", "oracle", "--seed", "1", "--inject-fault", "2,0"]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "(2,0)" in out
