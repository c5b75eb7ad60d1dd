#!/usr/bin/env python3
"""
Test result files and the run archive.
"""

import json
import sys
import zipfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core.estimators import CovEstimate, CovKind
from core.exceptions import InvalidConfig, ParseError
from core.export import ResultExporter
from core.ingest import TickSeries
from core.portfolio import Weights
from core.sync import SyncPanel, SyncScheme
from utils.archive import MANIFEST_NAME, RunArchive


def test_tick_cache_round_trip(tmp_path):
    series = TickSeries("AAA", np.array([0, 1_000_000_000, 5_500_000_000]), np.log([10.0, 10.02, 9.97]))
    assert ResultExporter.export_tick_caches({"AAA": series}, tmp_path / "cache")
    back = ResultExporter.read_tick_caches(tmp_path / "cache")
    assert [s.symbol for s in back] == ["AAA"]
    assert_array_equal(back[0].times, series.times)
    assert_array_equal(back[0].log_prices, series.log_prices)


def test_tick_cache_errors(tmp_path):
    with pytest.raises(InvalidConfig):
        ResultExporter.read_tick_caches(tmp_path)
    (tmp_path / "BAD.csv").write_text("time,price\n1,2\n")
    with pytest.raises(ParseError):
        ResultExporter.read_tick_cache(tmp_path / "BAD.csv")


def test_panel_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    panel = SyncPanel(np.array([0, 900, 1800, 2700]), rng.standard_normal((2, 4)),
                      SyncScheme.PREVIOUS_TICK, ["AAA", "BBB"])
    assert ResultExporter.export_panel(panel, tmp_path / "panel.csv")
    back = ResultExporter.read_panel(tmp_path / "panel.csv")
    assert back.scheme is SyncScheme.PREVIOUS_TICK
    assert back.symbols == ["AAA", "BBB"]
    assert_array_equal(back.grid, panel.grid)
    assert_array_equal(back.log_prices, panel.log_prices)


def test_cov_estimate_round_trip(tmp_path):
    estimate = CovEstimate(np.array([[2.0, 0.1], [0.1, 1.0 / 3.0]]), CovKind.TVA, (0.0, 1.0), 78)
    path = tmp_path / "est.csv"
    assert ResultExporter.export_cov_estimate(estimate, path)
    assert path.read_text().splitlines()[:2] == ["p,kind,start,end,n_obs", "2,TVA,0.0,1.0,78"]
    back = ResultExporter.read_cov_estimate(path)
    assert back.kind is CovKind.TVA and back.n_obs == 78
    assert_array_equal(back.matrix, estimate.matrix)

    (tmp_path / "junk.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ParseError):
        ResultExporter.read_cov_estimate(tmp_path / "junk.csv")


def test_weights_file(tmp_path):
    weights = Weights(np.array([0.75, 0.25]), "GMV", "day_004")
    path = tmp_path / "w.csv"
    assert ResultExporter.export_weights(weights, path, ["AAA", "BBB"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# strategy=GMV date=day_004 gross=1"
    assert lines[1:] == ["symbol,weight", "AAA,0.75", "BBB,0.25"]


@pytest.mark.parametrize("text", ["1\n3\n1\n3\n", "value,weight\n1,0.5\n3,0.5\n", "1,0.5\n3,0.5\n"])
def test_read_spectrum(tmp_path, text):
    path = tmp_path / "H.csv"
    path.write_text(text)
    H = ResultExporter.read_spectrum(path)
    assert H.atoms == (1.0, 3.0)
    assert_allclose(H.weights, [0.5, 0.5])


def test_matrix_round_trip(tmp_path):
    M = np.arange(9.0).reshape(3, 3) / 7.0
    assert ResultExporter.export_matrix(M, tmp_path / "m.csv")
    assert_array_equal(ResultExporter.read_matrix(tmp_path / "m.csv"), M)


def test_config_hash_is_canonical():
    a = RunArchive.config_hash({"seed": 1, "simulate": {"p": 3, "days": 2}})
    b = RunArchive.config_hash({"simulate": {"days": 2, "p": 3}, "seed": 1})
    assert a == b and len(a) == 64
    assert RunArchive.config_hash({"seed": 2}) != RunArchive.config_hash({"seed": 1})


def test_manifest(tmp_path):
    run_dir = RunArchive.create_run_directory(str(tmp_path / "run"), "simulate", ("ticks",))
    assert (run_dir / "ticks").is_dir()
    config = {"seed": 7}
    RunArchive.write_manifest(run_dir, "simulate", config, 7, {"outputs": ["ticks/day_000.csv"]})
    manifest = RunArchive.read_manifest(run_dir)
    assert manifest["config_sha256"] == RunArchive.config_hash(config)
    assert manifest["seed"] == 7
    assert manifest["outputs"] == ["ticks/day_000.csv"]
    assert {"python", "numpy", "scipy", "pandas"} <= set(manifest["versions"])
    assert json.loads((run_dir / MANIFEST_NAME).read_text())["command"] == "simulate"


def test_zip_archive(tmp_path):
    run_dir = RunArchive.create_run_directory(str(tmp_path / "run"), "sync")
    (run_dir / "panel.csv").write_text("x\n")
    target = tmp_path / "run.zip"
    assert RunArchive.create_zip_archive(str(run_dir), str(target))
    with zipfile.ZipFile(target) as z:
        assert z.namelist() == ["run/panel.csv"]
    assert not RunArchive.create_zip_archive(str(run_dir), str(tmp_path / "missing" / "run.zip"))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
