#!/usr/bin/env python3
"""
Test previous-tick and refresh-time synchronization.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core.exceptions import InsufficientHistory, InsufficientRefreshes, InvalidConfig
from core.ingest import NS_PER_SECOND, Session, TickSeries
from core.sync import FIFTEEN_MINUTES_NS, SyncScheme, Synchronizer


def series(name, times, prices=None):
    times = np.asarray(times)
    prices = np.arange(times.size, dtype=float) if prices is None else prices
    return TickSeries(name, times, prices, (0, 100))


def brute_force_refresh(times, start):
    """Scan the merged timeline one event at a time."""
    events = sorted({t for ts in times for t in ts if t >= start})
    grid, seen = [], [False] * len(times)
    for t in events:
        for i, ts in enumerate(times):
            if t in ts:
                seen[i] = True
        if all(seen):
            grid.append(t)
            seen = [False] * len(times)
    return grid


def test_fifteen_minute_grid():
    grid = Synchronizer.fifteen_minute_grid()
    assert grid.size == 27
    assert grid[0] == 0
    assert grid[-1] == Session().length_ns
    assert np.all(np.diff(grid) == 900 * NS_PER_SECOND)
    assert FIFTEEN_MINUTES_NS == 900 * NS_PER_SECOND


def test_fifteen_minute_grid_rejects_ragged_session():
    with pytest.raises(InvalidConfig):
        Synchronizer.fifteen_minute_grid(Session(0, 1000 * NS_PER_SECOND))


def test_previous_tick_values():
    s = series("A", [1, 3, 5], np.array([10.0, 20.0, 30.0]))
    panel = Synchronizer.previous_tick([s], np.array([3, 4]))
    assert_array_equal(panel.log_prices, [[20.0, 20.0]])
    assert panel.scheme is SyncScheme.PREVIOUS_TICK


def test_previous_tick_two_assets():
    a = series("A", [1, 3], np.array([1.0, 3.0]))
    b = series("B", [2, 4], np.array([2.0, 4.0]))
    panel = Synchronizer.previous_tick([a, b], np.array([2, 3, 4]))
    assert_array_equal(panel.log_prices, [[1.0, 3.0, 3.0], [2.0, 2.0, 4.0]])


def test_previous_tick_needs_history():
    with pytest.raises(InsufficientHistory) as err:
        Synchronizer.previous_tick([series("A", [5, 6])], np.array([4, 5]))
    assert err.value.symbol == "A"


def test_refresh_time_example():
    a = series("A", [1, 5, 9])
    b = series("B", [2, 6, 10])
    c = series("C", [3, 4, 8])
    panel = Synchronizer.refresh_time([a, b, c], 0)
    assert_array_equal(panel.grid, [3, 6, 10])
    # last tick at or before each refresh time
    assert_array_equal(panel.log_prices[2], [0.0, 1.0, 2.0])
    assert panel.n == 2


def test_refresh_time_single_asset_and_synchronous():
    a = series("A", [1, 4, 6, 9])
    assert_array_equal(Synchronizer.refresh_time([a]).grid, [1, 4, 6, 9])
    b = series("B", [1, 4, 6, 9])
    assert_array_equal(Synchronizer.refresh_time([a, b]).grid, [1, 4, 6, 9])


def test_refresh_time_too_few():
    with pytest.raises(InsufficientRefreshes):
        Synchronizer.refresh_time([series("A", [1, 5]), series("B", [2])])


def test_refresh_grid_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(25):
        p = int(rng.integers(1, 5))
        times = [np.unique(rng.integers(0, 100, int(rng.integers(3, 30)))) for _ in range(p)]
        start = int(rng.integers(0, 20))
        assert list(Synchronizer.refresh_grid(times, start)) == brute_force_refresh(times, start)


def test_refresh_grid_coarsens_when_assets_added():
    rng = np.random.default_rng(5)
    times = [np.unique(rng.integers(0, 200, 40)) for _ in range(4)]
    full = set(Synchronizer.refresh_grid(times, 0))
    for k in range(1, 4):
        assert Synchronizer.refresh_grid(times[:k], 0).size >= len(full)


def test_synchronous_schemes_agree():
    times = np.arange(0, 50, 5)
    rng = np.random.default_rng(2)
    ss = [series(n, times, rng.standard_normal(times.size)) for n in "AB"]
    refresh = Synchronizer.refresh_time(ss)
    previous = Synchronizer.previous_tick(ss, times)
    assert_array_equal(refresh.grid, previous.grid)
    assert_array_equal(refresh.log_prices, previous.log_prices)


def test_returns_telescope():
    rng = np.random.default_rng(4)
    ss = [series(n, np.sort(rng.choice(100, 30, replace=False)), rng.standard_normal(30)) for n in "ABC"]
    panel = Synchronizer.refresh_time(ss)
    R = panel.returns()
    assert_allclose(R.deltas.sum(axis=1), panel.log_prices[:, -1] - panel.log_prices[:, 0])


def test_concat_returns_skips_overnight():
    grid = np.array([0, 1, 2])
    day1 = Synchronizer.previous_tick([series("A", grid, np.array([0.0, 1.0, 3.0]))], grid)
    day2 = Synchronizer.previous_tick([series("A", grid, np.array([10.0, 10.5, 10.0]))], grid)
    R = Synchronizer.concat_returns([day1, day2])
    assert_allclose(R.deltas, [[1.0, 2.0, 0.5, -0.5]])
    assert R.n == 4


def test_refresh_retention():
    a = series("A", [1, 5, 9])
    b = series("B", [2, 6, 10])
    n_refresh, mean_ticks, expected = Synchronizer.refresh_retention([a, b])
    assert n_refresh == 3
    assert mean_ticks == 3.0
    assert expected == pytest.approx(3.0 / 1.5)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
