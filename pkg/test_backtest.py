#!/usr/bin/env python3
"""
Test the rolling backtest, its metrics and the parameter sweeps.
"""

import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core.backtest import (PUBLISHED_GRIDS, Backtester, BacktestReport, DayData, EstimatorKind,
                           History, MarketData, Objective, OptimizerKind, StrategySpec)
from core.exceptions import DegenerateSignal, EmptyEvaluationWindow, InvalidConfig
from core.parallel import map_ordered
from core.portfolio import PortfolioBuilder, Weights
from core.simulate import ClassCModel, GammaPath, PathSimulator


def synthetic_market(p=4, days=10, seed=0, steps_per_day=2_000, intensity=300.0, noise=1e-7):
    rng = np.random.default_rng(seed)
    lam = ClassCModel.lambda_from_spectrum(np.linspace(1.0, 3.0, p), rng)
    model = ClassCModel(lam, GammaPath.constant(0.02), noise_cov=noise * np.eye(p),
                        tick_intensity=intensity, seed=seed)
    record = PathSimulator.simulate_paths(model, steps_per_day * days, float(days), rng,
                                          anchor_times=tuple(float(d) for d in range(days)))
    return MarketData.from_record(record), model


@pytest.fixture(scope="module")
def market():
    return synthetic_market()[0]


STRATEGIES = [
    StrategySpec("EW", EstimatorKind.EW),
    StrategySpec("SP", EstimatorKind.SP, J_SP=4),
    StrategySpec("LS", EstimatorKind.LS, J_LS=3),
    StrategySpec("TS", EstimatorKind.TS, J_TS=2),
    StrategySpec("SQrD", EstimatorKind.SQRD, J1=3, dense_days=1),
    StrategySpec("SQrM", EstimatorKind.SQRM, J1=2, dense_days=1),
    StrategySpec("SQrD-L1", EstimatorKind.SQRD, OptimizerKind.L1_GMV, J1=3, dense_days=1, c=1.2),
]


def test_performance_metrics():
    av, sd, ir = Backtester.performance(np.array([0.01, 0.03]))
    assert av == pytest.approx(0.02 * 252)
    assert sd == pytest.approx(np.std([0.01, 0.03], ddof=1) * np.sqrt(252))
    assert ir == pytest.approx(av / sd)
    av, sd, ir = Backtester.performance(np.full(5, 0.001))
    assert sd == 0.0 and math.isnan(ir)
    av, _, _ = Backtester.performance(np.array([0.01, np.nan, 0.03]))
    assert av == pytest.approx(0.02 * 252)


def test_structural_counts():
    rng = np.random.default_rng(0)
    report = BacktestReport([f"d{k}" for k in range(174)], {"A": rng.normal(0, 0.01, 174)})
    assert Backtester.rolling_windows(report)["A"].shape == (133, 2)
    first, second = Backtester.subperiod_split(report, 87)
    assert len(first) == 87 and len(second) == 87
    assert second.dates[0] == "d87"
    assert len(Backtester.expand_grid(PUBLISHED_GRIDS[EstimatorKind.SQRD])) == 105
    assert len(Backtester.expand_grid(PUBLISHED_GRIDS[EstimatorKind.LS])) == 21


def test_subperiod_split_by_label_and_bounds():
    report = BacktestReport(["a", "b", "c"], {"A": np.array([0.1, 0.2, 0.3])})
    first, second = Backtester.subperiod_split(report, "b")
    assert first.dates == ["a"] and second.dates == ["b", "c"]
    with pytest.raises(EmptyEvaluationWindow):
        Backtester.subperiod_split(report, 0)


def test_strategy_spec_rules():
    assert StrategySpec("EW", EstimatorKind.EW, OptimizerKind.GMV).optimizer is OptimizerKind.EW
    spec = StrategySpec("SQrD", EstimatorKind.SQRD, OptimizerKind.MWM, J1=60, dense_days=2)
    assert spec.J == 62
    assert spec.lookback() == 250
    spec.validate(strict=True)
    with pytest.raises(InvalidConfig):
        StrategySpec("LS", EstimatorKind.LS, J_LS=55).validate(strict=True)
    with pytest.raises(InvalidConfig):
        StrategySpec("SQ", EstimatorKind.SQRD, J1=50, dense_days=6).validate()
    with pytest.raises(InvalidConfig):
        StrategySpec("TS", EstimatorKind.TS, tscv_K=1, tscv_J=1).validate()


def test_history_only_exposes_prior_days(market):
    history = History(market, 5)
    R = history.daily_returns(3)
    assert_array_equal(R, market.daily_returns[:, 2:5])
    assert history.latest_used == 4
    assert history.closes(2).shape == (market.p, 3)
    with pytest.raises(InvalidConfig):
        history.days(6)


def test_market_data_layout(market):
    assert len(market) == 10 and market.p == 4
    assert market.close_prices.shape == (4, 11)
    assert_allclose(market.daily_returns.sum(axis=1),
                    market.close_prices[:, -1] - market.close_prices[:, 0])
    assert market.index_of("day_003") == 3
    with pytest.raises(InvalidConfig):
        market.index_of("day_999")


def test_run_backtest_all_strategies(market):
    report = Backtester.run_backtest(STRATEGIES, market, (4, 10))
    assert report.dates == [f"day_{d:03d}" for d in range(4, 10)]
    assert report.strategies == [s.name for s in STRATEGIES]
    for name in report.strategies:
        assert report.coverage(name) == 1.0, name
    assert_allclose(report.returns["EW"], market.daily_returns[:, 4:10].mean(axis=0))

    table = Backtester.summary_table(report)
    assert list(table.columns) == ["strategy", "AV", "SD", "IR", "coverage", "best"]
    assert (table["best"].str.contains("minSD")).sum() == 1


def test_backtest_is_deterministic_and_thread_independent(market):
    a = Backtester.run_backtest(STRATEGIES, market, (4, 10), threads=1)
    b = Backtester.run_backtest(STRATEGIES, market, (4, 10), threads=3)
    for name in a.strategies:
        assert_array_equal(a.returns[name], b.returns[name])


def test_window_checks(market):
    with pytest.raises(EmptyEvaluationWindow):
        Backtester.run_backtest(STRATEGIES[:1], market, (20, 30))
    with pytest.raises(InvalidConfig):
        Backtester.run_backtest([StrategySpec("SP", EstimatorKind.SP, J_SP=6)], market, (4, 10))
    with pytest.raises(InvalidConfig):
        Backtester.run_backtest([StrategySpec("EW", EstimatorKind.EW)] * 2, market, (4, 10))
    report = Backtester.run_backtest(STRATEGIES[:1], market, ("day_004", "day_006"))
    assert len(report) == 3


def test_failed_days_lower_coverage(market, monkeypatch):
    real = Backtester.weights_for_day

    def flaky(spec, history):
        if history.day % 2 == 0:
            raise DegenerateSignal("collinear")
        return real(spec, history)

    monkeypatch.setattr(Backtester, "weights_for_day", staticmethod(flaky))
    report = Backtester.run_backtest(STRATEGIES[:1], market, (4, 10))
    assert report.coverage("EW") == pytest.approx(0.5)
    assert report.failures["EW"] == 3
    assert np.isfinite(report.metrics("EW")[0])


def test_look_ahead_is_caught(market, monkeypatch):
    def peeking(spec, history):
        # momentum over a window that runs through the evaluation day
        R = history.returns_between(history.day - 2, history.day + 1)
        w = np.maximum(R.sum(axis=1), 0.0) + 1.0
        return Weights(w / w.sum(), spec.name)

    monkeypatch.setattr(Backtester, "weights_for_day", staticmethod(peeking))
    with pytest.raises(RuntimeError, match="used data of day 4 on day 4"):
        Backtester.run_backtest(STRATEGIES[:1], market, (4, 10))


def test_two_scale_history_stays_before_the_day(market):
    history = History(market, 6)
    M, is_inverse = Backtester.estimate_covariance(StrategySpec("TS", EstimatorKind.TS, J_TS=2), history)
    assert not is_inverse and M.shape == (4, 4)
    assert history.latest_used == 5
    with pytest.raises(InvalidConfig):
        history.span(8, 11)


def test_cached_estimates_are_built_once_across_threads(market):
    day = DayData("fresh", market.days[0].series, market.days[0].session)
    panels = map_ordered(lambda _: day.refresh_panel, range(8), threads=4)
    assert all(panel is panels[0] for panel in panels)

    data = MarketData(market.days)
    matrices = map_ordered(lambda _: data.tscv_day(1, 10, 1), range(8), threads=4)
    assert all(m is matrices[0] for m in matrices)


def test_grid_sweep(market):
    best, table = Backtester.grid_sweep(StrategySpec("LS", EstimatorKind.LS), {"J_LS": [2, 3, 4]},
                                        Objective.MIN_SD, market, (4, 10))
    assert len(table) == 3
    assert best.J_LS in (2, 3, 4)
    assert table.loc[table["minSD"].idxmin(), "J_LS"] == best.J_LS


def test_time_span_sweep(market):
    table = Backtester.time_span_sweep(StrategySpec("LS", EstimatorKind.LS),
                                       StrategySpec("SQrD", EstimatorKind.SQRD), market, (5, 10), spans=[2, 3])
    assert list(table["span"]) == [2, 3]
    assert np.all(np.isfinite(table[["SD_LS", "SD_SQrD"]].to_numpy()))


@pytest.mark.slow
def test_sqml_beats_linear_shrinkage_out_of_sample():
    sqrm = StrategySpec("SQrM", EstimatorKind.SQRM, J1=5, dense_days=1)
    ls = StrategySpec("LS", EstimatorKind.LS, J_LS=6)
    ratios = []
    for rep in range(50):
        data, model = synthetic_market(p=50, days=6, seed=1000 + rep, steps_per_day=23_400,
                                       intensity=22_500.0, noise=1e-7)
        truth = model.covariance_shape
        history = History(data, 6)
        sqml = Backtester.sqml_for(sqrm, history)
        loss_sqml = PortfolioBuilder.oos_loss(sqml.sigma_inv_hat, truth, inverse=True)
        loss_ls = PortfolioBuilder.oos_loss(Backtester.estimate_covariance(ls, history)[0], truth)
        ratios.append(loss_sqml / loss_ls)
    ratios = np.array(ratios)
    assert np.mean(ratios < 1.0) >= 0.8
    assert ratios.mean() < 1.0


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
