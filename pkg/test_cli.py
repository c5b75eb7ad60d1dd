#!/usr/bin/env python3
"""
Test the command line: exit codes, the simulate -> backtest flow and
byte-identical reruns.
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from cli import main
from core.estimators import CovKind
from core.export import ResultExporter
from core.sync import SyncScheme
from utils.archive import RunArchive

STRATEGIES = [
    {"name": "EW", "estimator": "EW"},
    {"name": "SP", "estimator": "SP", "J_SP": 4},
    {"name": "LS", "estimator": "LS", "J_LS": 3},
    {"name": "TS", "estimator": "TS", "J_TS": 2},
    {"name": "SQrD", "estimator": "SQrD", "J1": 3, "dense_days": 1},
]


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = main(["simulate", "-o", str(out), "--p", "4", "--days", "8", "--fine-steps", "2000",
                 "--tick-intensity", "300", "--seed", "3", "-q"])
    assert code == 0
    return out


@pytest.fixture
def backtest_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"backtest": {"strategies": STRATEGIES}}))
    return path


def test_help_and_usage_errors(capsys):
    assert main(["--help"]) == 0
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["simulate", "--p", "four"]) == 2
    capsys.readouterr()


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["rmt-check", "--config", str(bad), "--no-simulations", "-o", str(tmp_path)]) == 2
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"simulate": {"colour": "blue"}}))
    assert main(["simulate", "--config", str(unknown), "-o", str(tmp_path)]) == 2
    assert main(["rmt-check", "--config", str(tmp_path / "missing.json"), "-o", str(tmp_path)]) == 2
    assert main(["backtest", str(tmp_path / "nowhere"), "-o", str(tmp_path)]) == 2
    assert main(["simulate", "--threads", "0", "-o", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_unit_ratio_is_a_usage_error(tmp_path, capsys):
    assert main(["rmt-check", "--y", "1", "--no-simulations", "-o", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_malformed_tick_file_is_a_runtime_error(tmp_path):
    raw = tmp_path / "ticks.csv"
    raw.write_text("sym,time,px\nAAA,09:30:00,10\n")
    assert main(["ingest", str(raw), "-o", str(tmp_path / "out"), "-q"]) == 1
    raw.write_text("symbol,timestamp,price,cond,corr\nAAA,09:30:00,10.0,,0\nAAA,09:30:01,10.0,,0,EXTRA\n")
    assert main(["ingest", str(raw), "-o", str(tmp_path / "out"), "-q"]) == 1


def test_rmt_check_without_simulations(tmp_path, capsys):
    out = tmp_path / "rmt"
    assert main(["rmt-check", "--no-simulations", "-o", str(out), "--zip"]) == 0
    lines = (out / "rmt_tables.csv").read_text().splitlines()
    assert lines[0] == "x,F,Psi,delta,g"
    assert len(lines) > 10
    printed = capsys.readouterr().out
    assert "delta≡1 PASS" in printed
    assert "limit loss" in printed
    assert RunArchive.read_manifest(out)["outputs"] == ["rmt_tables.csv"]
    assert (tmp_path / "rmt.zip").is_file()


def test_rmt_check_with_spectrum_file(tmp_path):
    spectrum = tmp_path / "H.csv"
    spectrum.write_text("0.5\n1.0\n4.0\n")
    assert main(["rmt-check", "--no-simulations", "--spectrum", str(spectrum), "--y", "0.3",
                 "-o", str(tmp_path / "rmt"), "-q"]) == 0


def test_simulate_outputs(simulated):
    ticks = sorted((simulated / "ticks").glob("day_*.csv"))
    assert [t.name for t in ticks] == [f"day_{d:03d}.csv" for d in range(8)]
    assert ResultExporter.read_matrix(simulated / "truth" / "icv_day_000.csv").shape == (4, 4)
    assert ResultExporter.read_matrix(simulated / "truth" / "covariance_shape.csv").shape == (4, 4)
    manifest = RunArchive.read_manifest(simulated)
    assert manifest["seed"] == 3
    assert manifest["config"]["simulate"]["p"] == 4
    assert "ticks/day_007.csv" in manifest["outputs"]


def test_simulate_is_reproducible(simulated, tmp_path):
    again = tmp_path / "again"
    assert main(["simulate", "-o", str(again), "--p", "4", "--days", "8", "--fine-steps", "2000",
                 "--tick-intensity", "300", "--seed", "3", "-q"]) == 0
    for name in ("ticks/day_000.csv", "ticks/day_007.csv", "truth/closes.csv"):
        assert (again / name).read_bytes() == (simulated / name).read_bytes()


def test_ingest_then_sync(simulated, tmp_path, capsys):
    cache = tmp_path / "ingest"
    assert main(["ingest", str(simulated / "ticks" / "day_000.csv"), "-o", str(cache), "-q"]) == 0
    assert len(list((cache / "cache").glob("*.csv"))) == 4

    assert main(["sync", str(cache / "cache"), "-o", str(tmp_path / "rt"), "-q"]) == 0
    panel = ResultExporter.read_panel(tmp_path / "rt" / "panel.csv")
    assert panel.scheme is SyncScheme.REFRESH_TIME and panel.p == 4

    assert main(["sync", str(cache / "cache"), "--scheme", "previous_tick",
                 "-o", str(tmp_path / "pt"), "-q"]) == 0
    panel = ResultExporter.read_panel(tmp_path / "pt" / "panel.csv")
    assert panel.n == 26
    capsys.readouterr()


def test_estimate(simulated, tmp_path):
    out = tmp_path / "tva"
    assert main(["estimate", str(simulated / "ticks"), "--kind", "tva", "--day", "day_002",
                 "-o", str(out), "-q"]) == 0
    estimate = ResultExporter.read_cov_estimate(out / "estimate_tva.csv")
    assert estimate.kind is CovKind.TVA and estimate.p == 4

    out = tmp_path / "sqml"
    assert main(["estimate", str(simulated / "ticks"), "--kind", "sqml", "--J", "4", "--J1", "3",
                 "-o", str(out), "-q"]) == 0
    for name in ("basis.csv", "v_hat.csv", "sigma_hat.csv"):
        assert (out / "sqml" / name).is_file()

    assert main(["estimate", str(simulated / "ticks"), "--kind", "nope", "-o", str(out)]) == 2


def test_backtest_reruns_byte_identical(simulated, backtest_config, tmp_path, capsys):
    runs = []
    for k in range(2):
        out = tmp_path / f"bt{k}"
        assert main(["backtest", str(simulated / "ticks"), "--config", str(backtest_config),
                     "-o", str(out), "--threads", str(k + 1), "--split", "day_006", "-q"]) == 0
        runs.append(out)
    for name in ("report/daily_returns.csv", "report/summary.csv", "report/rolling.csv",
                 "report_part1/summary.csv", "weights/SQrD.csv"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes(), name

    first = (runs[0] / "weights" / "EW.csv").read_text().splitlines()[0]
    assert first.startswith("# strategy=EW date=day_007")
    manifest = RunArchive.read_manifest(runs[0])
    assert "weights/LS.csv" in manifest["outputs"]
    assert manifest["config"]["backtest"]["strategies"] == STRATEGIES
    printed = capsys.readouterr().out
    assert "Evaluated 4 days (day_004 .. day_007)" in printed


def test_default_simulate_then_backtest(tmp_path, capsys):
    sim = tmp_path / "sim"
    assert main(["simulate", "-o", str(sim), "-q"]) == 0
    assert len(list((sim / "ticks").glob("day_*.csv"))) == 3
    assert main(["estimate", str(sim / "ticks"), "--kind", "sqml", "-o", str(tmp_path / "est"), "-q"]) == 0
    out = tmp_path / "bt"
    assert main(["backtest", str(sim / "ticks"), "-o", str(out), "-q"]) == 0
    assert "Evaluated 1 days (day_002 .. day_002)" in capsys.readouterr().out
    summary = (out / "report" / "summary.csv").read_text().splitlines()
    assert [line.split(",")[0] for line in summary[1:]] == ["EW", "SQrM", "LS", "TS"]
    assert (out / "weights" / "EW.csv").is_file()


def test_backtest_window_errors(simulated, backtest_config, tmp_path):
    args = ["backtest", str(simulated / "ticks"), "--config", str(backtest_config), "-o", str(tmp_path), "-q"]
    assert main(args + ["--eval-start", "day_007", "--eval-end", "day_005"]) == 2
    assert main(args + ["--eval-start", "day_099"]) == 2
    # the published grids need far more history than eight days
    assert main(args + ["--sweep", "SQrD"]) == 2


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
