import json
import subprocess
import sys

import pytest

from seasoncast.cli import main
from seasoncast.datagen import SimConfig


def _config(tmp_path, **kw):
    p = tmp_path / "cfg.json"
    p.write_text(SimConfig(**{"n_weeks": 6, "seed": 3, **kw}).to_json())
    return p


@pytest.fixture(scope="module")
def series_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    cfg = d / "cfg.json"
    cfg.write_text(SimConfig(n_weeks=6, seed=3, volume_scale=3.0).to_json())
    out = d / "series" / "s.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--n-skills", "2"]) == 0
    return out


def test_simulate_rows_manifest_and_bytes(tmp_path, series_file):
    lines = series_file.read_text().splitlines()
    assert len(lines) == 1 + 2 * 6 * 5 * 32
    manifest = json.loads((series_file.parent / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    cfg = _config(tmp_path)
    a, b = tmp_path / "a" / "x.csv", tmp_path / "b" / "x.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(a), "--seed", "8"]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(b), "--seed", "8"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_simulate_bad_config_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"rho_day": 1.5}))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o.csv")]) == 2
    assert "rho_day" in capsys.readouterr().err
    p.write_text("{not json")
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o.csv")]) == 2


def test_fit_doubly_stoch_converges(tmp_path, series_file):
    out = tmp_path / "ds"
    assert main(["fit", "doubly-stoch", str(series_file), "--skill", "S1", "--target-day", "26",
                 "--out", str(out), "--json"]) == 0
    assert json.loads((out / "fit.json").read_text())["converged"] is True
    assert len((out / "forecast.csv").read_text().splitlines()) == 33


def test_fit_winters_on_one_week_exit_3(tmp_path):
    cfg = _config(tmp_path, n_weeks=1)
    f = tmp_path / "one" / "s.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(f)]) == 0
    assert main(["fit", "winters", str(f), "--out", str(tmp_path / "w")]) == 3
    assert main(["fit", "winters", str(f), "--weeks", "1", "--target-day", "5",
                 "--out", str(tmp_path / "w")]) == 3


@pytest.mark.parametrize("model", ["winters", "arima", "seasonal-naive"])
def test_fit_classical_models(tmp_path, series_file, model):
    assert main(["fit", model, str(series_file), "--target-day", "30", "--out", str(tmp_path / model)]) == 0


def test_fit_gru_repeatable(tmp_path, series_file):
    args = ["fit", "gru", str(series_file), "--target-day", "27", "--nnodes", "8", "--max-epochs", "15",
            "--seed", "4", "--cheat"]
    assert main(args + ["--out", str(tmp_path / "g1"), "--dump-features", str(tmp_path / "x.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "g2")]) == 0
    assert (tmp_path / "g1" / "forecast.csv").read_bytes() == (tmp_path / "g2" / "forecast.csv").read_bytes()
    header = (tmp_path / "x.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 48 and header[0] == "day_num" and header[-1] == "target"


def test_doe_and_analyze(tmp_path, series_file, capsys):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"factors": {"model.type": ["dense"], "nlayers": [1], "mixed.cheat": [False, True],
                                            "nnodes": [4, 8], "kernel.L2.reg": [0.0]},
                                "n_days": 3, "max_epochs": 10}))
    out = tmp_path / "doe"
    assert main(["doe", "--plan", str(plan), "--series", str(series_file.parent), "--out", str(out)]) == 0
    runs = (out / "runs.csv").read_text().splitlines()
    assert len(runs) == 1 + 4 * 2 * 3
    assert main(["analyze", "--runs", str(out / "runs.csv"), "--out", str(tmp_path / "an"), "--svg"]) == 0
    for f in ("variance_tests.csv", "mean_tests.csv", "profile.csv", "selection.json", "histogram_wape.csv",
              "profile.svg", "manifest.json"):
        assert (tmp_path / "an" / f).exists()
    first = (tmp_path / "an" / "profile.csv").read_bytes()
    assert main(["analyze", "--runs", str(out / "runs.csv"), "--out", str(tmp_path / "an")]) == 0
    assert (tmp_path / "an" / "profile.csv").read_bytes() == first


def test_doe_empty_plan_exit_2(tmp_path, series_file):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"factors": {}}))
    assert main(["doe", "--plan", str(plan), "--series", str(series_file.parent), "--out", str(tmp_path)]) == 2


def test_doe_too_few_epochs_exit_2(tmp_path, series_file):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"factors": {"model.type": ["dense"], "nlayers": [1], "mixed.cheat": [False],
                                            "nnodes": [4], "kernel.L2.reg": [0.0]}, "max_epochs": 5}))
    assert main(["doe", "--plan", str(plan), "--series", str(series_file.parent), "--out", str(tmp_path)]) == 2


def test_analyze_malformed_csv_exit_2(tmp_path, capsys):
    p = tmp_path / "runs.csv"
    p.write_text("model.type,nlayers,mixed.cheat,nnodes,kernel.L2.reg,split,file,wape,status\n"
                 "gru,one,FALSE,25,0.0,A,1,0.1,ok\n")
    assert main(["analyze", "--runs", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "row 1" in capsys.readouterr().err
    assert main(["analyze", "--runs", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")]) == 3


def test_backtest_command(tmp_path, series_file):
    plan = tmp_path / "bt.json"
    plan.write_text(json.dumps({"skills": ["S1", "S2"], "n_forecast_days": 2,
                                "models": ["DoublyStoch", "Winters", "SeasonalNaive"]}))
    out = tmp_path / "bt"
    assert main(["backtest", "--plan", str(plan), "--series", str(series_file.parent), "--out", str(out)]) == 0
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == "split,sum_call_vol,DoublyStoch,Winters,SeasonalNaive"
    assert len(summary) == 3
    plan.write_text(json.dumps({"skills": ["S1"], "models": ["Nope"]}))
    assert main(["backtest", "--plan", str(plan), "--series", str(series_file.parent), "--out", str(out)]) == 2


def test_console_entry_point_runs():
    r = subprocess.run([sys.executable, "-m", "seasoncast.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
