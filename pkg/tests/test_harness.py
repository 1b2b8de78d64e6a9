import json
import math

import numpy as np
import pytest

from nswhittle.cli import main
from nswhittle.harness import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentConfig,
    audit_run,
    emit_results,
    load_regret_csv,
    make_environment,
    run_baseline,
    run_experiment,
    run_ns_whittle,
    tune_parameters,
)

SMALL = dict(num_arms=3, num_states=2, budget=1, discount=0.9, horizon=60)


def test_tuning_example():
    windows, etas = tune_parameters(4, 10_000, [4.0], 4.0)
    assert windows == [200]
    assert etas[0] == pytest.approx(math.sqrt(4 * 200 / 10_000))


def test_tuning_scales_with_budget():
    w1, _ = tune_parameters(4, 10_000, [1.0], 1.0)
    w4, _ = tune_parameters(4, 10_000, [4.0], 4.0)
    assert w4[0] * 2 == w1[0]


def test_tuning_stationary_fallback():
    assert tune_parameters(3, 500, [0.0, 0.0], 0.0) == ([500, 500], [1 / 500, 1 / 500])


def test_collapsed_sets_give_zero_regret():
    cfg = ExperimentConfig(**SMALL, collapse_sets=True)
    for rep in range(3):
        art = run_ns_whittle(cfg, make_environment(cfg, rep), rep)
        assert np.max(np.abs(art.records["gap"])) < 1e-9


def test_oracle_baseline_has_zero_regret():
    cfg = ExperimentConfig(**SMALL, mode="abrupt", target_budget=1.0)
    env = make_environment(cfg, 0)
    art = run_baseline(cfg, env, "oracle")
    assert np.all(art.records["cum_regret"] == 0.0)
    assert np.all(art.records["active_count"] <= 1)


def test_random_baseline_accumulates_regret():
    cfg = ExperimentConfig(**{**SMALL, "horizon": 400})
    art = run_baseline(cfg, make_environment(cfg, 1), "random")
    cum = art.records["cum_regret"]
    assert cum[-1] > 0
    assert cum[-1] / cum[199] == pytest.approx(2.0, rel=0.3)
    assert np.all(np.isnan(art.records["lambda_t"]))


def test_learner_respects_budget_and_value_bound():
    cfg = ExperimentConfig(**SMALL, mode="drift", target_budget=1.0, audit=True)
    art = run_ns_whittle(cfg, make_environment(cfg, 2), 2)
    assert np.all(art.records["active_count"] <= 1)
    assert art.value_bound["violations"] == 0
    assert art.bad_event["good_event"] in (True, False)
    assert art.optimism["steps"] == cfg.horizon - 1


def test_emitted_csv_layout(tmp_path):
    cfg = ExperimentConfig(**{**SMALL, "horizon": 10}, audit=True)
    out = emit_results(run_experiment(cfg), cfg, tmp_path / "run")
    raw = (out / "regret.csv").read_bytes()
    lines = raw.split(b"\r\n")
    assert lines[0].decode() == ",".join(CSV_COLUMNS)
    assert len([ln for ln in lines[1:] if ln]) == 10
    cols = load_regret_csv(out / "regret.csv")[0]
    assert np.array_equal(np.cumsum(cols["gap"]), cols["cum_regret"])
    assert audit_run(out) == []
    snap = json.loads((out / "config.json").read_text())
    assert snap["config"]["horizon"] == 10


def test_rerun_is_byte_identical_and_worker_independent(tmp_path):
    cfg = ExperimentConfig(**SMALL, mode="abrupt", target_budget=1.0, replications=3, seed=5)
    a = emit_results(run_experiment(cfg), cfg, tmp_path / "a")
    b = emit_results(run_experiment(cfg), cfg, tmp_path / "b")
    c = emit_results(run_experiment(cfg.replace(workers=2)), cfg, tmp_path / "c")
    assert (a / "regret.csv").read_bytes() == (b / "regret.csv").read_bytes()
    assert (a / "regret.csv").read_bytes() == (c / "regret.csv").read_bytes()


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**SMALL, "colour": "blue"})
    with pytest.raises(ConfigError):
        ExperimentConfig(**SMALL, policy="greedy")
    with pytest.raises(ConfigError):
        ExperimentConfig(**SMALL, window="wide")


def test_solve_every_reuses_multiplier():
    cfg = ExperimentConfig(**SMALL, solve_every=5)
    art = run_ns_whittle(cfg, make_environment(cfg, 0), 0)
    lam = art.records["lambda_t"]
    assert np.all(lam[1:5] == lam[1])


def write_config(tmp_path, **extra):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**SMALL, "horizon": 20, **extra}))
    return path


def test_cli_run_tune_audit(tmp_path, capsys):
    cfg = write_config(tmp_path, mode="abrupt", target_budget=0.5)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--replications", "2",
                 "--audit", "--seed", "3"]) == 0
    assert (out / "regret.csv").exists()
    assert main(["audit", "--run", str(out)]) == 0
    assert main(["tune", "--config", str(cfg)]) == 0
    tuned = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert len(tuned["windows"]) == 3


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**SMALL, "unknown_key": 1}))
    assert main(["run", "--config", str(bad)]) == 1
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1
    infeasible = write_config(tmp_path, mode="drift", target_budget=500.0)
    assert main(["run", "--config", str(infeasible), "--out", str(tmp_path / "x")]) == 2
    good = write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["run", "--config", str(good), "--out", str(out)]) == 0
    csv_path = out / "regret.csv"
    rows = csv_path.read_bytes().split(b"\r\n")
    fields = rows[1].split(b",")
    fields[5] = b"123.0"  # corrupt cum_regret
    rows[1] = b",".join(fields)
    csv_path.write_bytes(b"\r\n".join(rows))
    assert main(["audit", "--run", str(out)]) == 3
