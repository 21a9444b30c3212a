import csv
import json

import numpy as np
import pytest

from onebit_sysid.cli import main
from onebit_sysid.estimators import unpack_transcript
from onebit_sysid.harness import (
    MSE_COLUMNS,
    THREADS_ENV,
    diagnose,
    load_runs,
    resolve_parallel,
    run_chunk,
    run_experiment,
    simulate_ensemble,
)

from conftest import CONFIG_DIR, shipped_config

OUTPUTS = ("mse.csv", "moments.csv", "trajectory.csv", "diagnostics.json")


def small_config(runs=6, horizon=300, **over):
    cfg = shipped_config("section51_corrected")
    grid = tuple(sorted({k for k in (10, 50, 100, 200) if k < horizon} | {horizon}))
    return cfg.with_overrides(runs=runs, horizon=horizon, grid=grid, crlb_horizon=20_000, **over)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_single_short_run_writes_full_trajectory(tmp_path):
    cfg = small_config(runs=1, horizon=10)
    res = run_experiment(cfg, tmp_path, with_crlb=False)
    rows = read_csv(res.files["trajectory"])
    assert rows[0][:2] == ["k", "theta_hat_1"] and rows[0][-2:] == ["s", "omega"]
    assert len(rows) - 1 == 10
    assert [r[0] for r in rows[1:]] == [str(k) for k in range(1, 11)]
    # omega needs theta_rls five steps ahead
    assert rows[-1][-1] == "nan" and rows[5][-1] != "nan"


def test_mse_csv_schema(tmp_path):
    res = run_experiment(small_config(), tmp_path, with_crlb=False)
    rows = read_csv(res.files["mse"])
    assert tuple(rows[0]) == MSE_COLUMNS
    assert [int(r[0]) for r in rows[1:]] == [10, 50, 100, 200, 300]
    # 17 significant digits round-trip exactly
    assert float(rows[-1][1]) == res.aggregate.k_mse[-1]


def test_rerun_is_byte_identical(tmp_path):
    cfg = small_config()
    run_experiment(cfg, tmp_path / "a", with_crlb=True)
    run_experiment(cfg, tmp_path / "b", with_crlb=True)
    for name in OUTPUTS:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_parallelism_does_not_change_outputs(tmp_path):
    cfg = small_config(runs=120, horizon=200)
    run_experiment(cfg, tmp_path / "p1", parallel=1, with_crlb=False)
    run_experiment(cfg, tmp_path / "p8", parallel=8, with_crlb=False)
    for name in OUTPUTS:
        assert (tmp_path / "p1" / name).read_bytes() == (tmp_path / "p8" / name).read_bytes()


def test_seed_ladder_is_stable():
    cfg = small_config(runs=4)
    full, _ = simulate_ensemble(cfg)
    shifted, _ = simulate_ensemble(cfg.with_overrides(seed=cfg.seed + 2, runs=2))
    assert [s.seed for s in full] == [0, 1, 2, 3]
    for a, b in zip(full[2:], shifted):
        assert a.seed == b.seed
        assert np.array_equal(a.err_sa, b.err_sa)


def test_env_var_overrides_parallel(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert resolve_parallel(1) == 3
    monkeypatch.setenv(THREADS_ENV, "lots")
    with pytest.raises(ValueError):
        resolve_parallel(1)
    monkeypatch.delenv(THREADS_ENV)
    assert resolve_parallel(None) == 1


def test_saved_runs_round_trip(tmp_path):
    cfg = small_config(runs=3)
    run_experiment(cfg, tmp_path, save_runs=True, with_crlb=False)
    loaded = load_runs(tmp_path / "runs")
    _, first = run_chunk(cfg, cfg.seeds(), keep_first=True)
    assert [r.seed for r in loaded] == [0, 1, 2]
    np.testing.assert_array_equal(loaded[0].theta_hat, first.theta_hat)
    np.testing.assert_array_equal(loaded[0].transcript, first.transcript)
    bits = (tmp_path / "runs" / "run_0.bits").read_bytes()
    np.testing.assert_array_equal(unpack_transcript(bits, cfg.horizon), first.transcript)
    assert loaded[0].config_hash == cfg.config_hash()


def test_diagnose_reproduces_outputs(tmp_path):
    cfg = small_config(runs=5)
    run_experiment(cfg, tmp_path / "run", save_runs=True, with_crlb=True)
    diagnose(tmp_path / "run", tmp_path / "again", with_crlb=True)
    for name in ("mse.csv", "moments.csv", "diagnostics.json"):
        assert (tmp_path / "run" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_diagnostics_content(tmp_path):
    res = run_experiment(small_config(runs=4), tmp_path, with_crlb=True)
    d = json.loads((tmp_path / "diagnostics.json").read_text())
    assert d["runs"] == 4
    assert d["normality"] is None  # too few runs
    assert d["crlb"]["trace"] == pytest.approx(res.crlb.trace_bar)


# -- command line ---------------------------------------------------------------------


def test_cli_crlb_prints_trace(capsys):
    assert main(["crlb", "--config", str(CONFIG_DIR / "comparison3.conf")]) == 0
    assert "trace = 0.03" in capsys.readouterr().out


def test_cli_missing_config_exits_1(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.conf")]) == 1


def test_cli_bad_config_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.conf"
    bad.write_text("system.b = [1]\nrun.horizon = 10\nsystem.bogus = 1\n")
    assert main(["run", "--config", str(bad)]) == 1
    assert "system.bogus" in capsys.readouterr().err


def test_cli_usage_error_exits_1():
    assert main(["run"]) == 1
    assert main(["frobnicate"]) == 1


def test_cli_runtime_error_exits_2(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    conf = tmp_path / "c.conf"
    conf.write_text("system.b = [1]\nrun.horizon = 10\nrun.runs = 2\n")
    assert main(["run", "--config", str(conf), "--out", str(blocker / "sub"), "--no-crlb"]) == 2


def test_cli_run_and_diagnose(tmp_path, capsys):
    conf = tmp_path / "c.conf"
    conf.write_text(small_config().echo())
    out = tmp_path / "out"
    assert main(["run", "--config", str(conf), "--runs", "3", "--out", str(out), "--save-runs", "--no-crlb"]) == 0
    assert (out / "mse.csv").exists() and len(list((out / "runs").glob("*.npz"))) == 3
    before = (out / "mse.csv").read_bytes()
    assert main(["diagnose", "--in", str(out), "--no-crlb"]) == 0
    assert (out / "mse.csv").read_bytes() == before
    assert main(["diagnose", "--in", str(tmp_path)]) == 1
    capsys.readouterr()
