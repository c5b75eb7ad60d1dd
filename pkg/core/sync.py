"""
Synchronization for ICV Shrink.
Turns asynchronous TickSeries into log-price panels on a common grid
using the previous-tick or the refresh-time scheme.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import InsufficientHistory, InsufficientRefreshes, InvalidConfig
from .ingest import NS_PER_SECOND, Session, TickSeries

logger = logging.getLogger(__name__)

FIFTEEN_MINUTES_NS = 900 * NS_PER_SECOND


class SyncScheme(Enum):
    PREVIOUS_TICK = "previous_tick"
    REFRESH_TIME = "refresh_time"


@dataclass
class ReturnsMatrix:
    """p x n log-returns with the n+1 grid points they were differenced on."""
    deltas: np.ndarray
    grid: np.ndarray

    def __post_init__(self):
        self.deltas = np.atleast_2d(np.asarray(self.deltas, dtype=float))
        self.grid = np.asarray(self.grid)
        if self.grid.shape[0] != self.deltas.shape[1] + 1:
            raise ValueError("grid must have one more point than there are returns")

    @property
    def p(self) -> int:
        return self.deltas.shape[0]

    @property
    def n(self) -> int:
        return self.deltas.shape[1]


@dataclass
class SyncPanel:
    """Synchronous log-prices: row i is asset i, column k is grid point k."""
    grid: np.ndarray
    log_prices: np.ndarray
    scheme: SyncScheme
    symbols: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        self.log_prices = np.atleast_2d(np.asarray(self.log_prices, dtype=float))
        if self.log_prices.shape[1] != self.grid.shape[0]:
            raise ValueError("panel column count must equal grid length")
        if self.grid.size > 1 and np.any(np.diff(self.grid) <= 0):
            raise ValueError("panel grid must be strictly increasing")
        if not self.symbols:
            self.symbols = [f"asset{i}" for i in range(self.log_prices.shape[0])]

    @property
    def p(self) -> int:
        return self.log_prices.shape[0]

    @property
    def n(self) -> int:
        """Number of returns."""
        return self.log_prices.shape[1] - 1

    def returns(self) -> ReturnsMatrix:
        return Synchronizer.to_returns(self)


class Synchronizer:
    """Previous-tick and refresh-time synchronization."""

    @staticmethod
    def fifteen_minute_grid(session: Optional[Session] = None,
                            step_ns: int = FIFTEEN_MINUTES_NS) -> np.ndarray:
        """
        Sparse sampling grid from session open to session close.

        Returns:
            int64 timestamps in ns since open; 27 points for 9:30-16:00
        """
        session = session or Session()
        if session.length_ns % step_ns:
            raise InvalidConfig("session length must be a whole number of sampling steps")
        return np.arange(0, session.length_ns + 1, step_ns, dtype=np.int64)

    @staticmethod
    def previous_tick(series: Sequence[TickSeries], grid: np.ndarray) -> SyncPanel:
        """
        Sample every asset at each grid point with its last tick at or before it.

        Raises:
            InsufficientHistory: an asset has no tick at or before grid[0]
        """
        grid = np.asarray(grid)
        rows = []
        for s in series:
            idx = np.searchsorted(s.times, grid, side="right") - 1
            if idx.size and idx[0] < 0:
                raise InsufficientHistory(s.symbol)
            rows.append(s.log_prices[idx])
        return SyncPanel(grid, np.vstack(rows), SyncScheme.PREVIOUS_TICK, [s.symbol for s in series])

    @staticmethod
    def refresh_grid(times: Sequence[np.ndarray], start) -> np.ndarray:
        """Refresh times of a set of tick-time arrays, counting ticks at or after start."""
        pos = [np.searchsorted(t, start, side="left") for t in times]
        grid = []
        while all(k < t.size for k, t in zip(pos, times)):
            # the round closes when the last asset to trade does so
            tau = max(t[k] for k, t in zip(pos, times))
            grid.append(tau)
            pos = [np.searchsorted(t, tau, side="right") for t in times]
        return np.asarray(grid, dtype=np.asarray(times[0]).dtype if len(times) else np.int64)

    @staticmethod
    def refresh_time(series: Sequence[TickSeries], start=0) -> SyncPanel:
        """
        Refresh-time panel: each grid point is the first time every asset
        has traded at least once since the previous grid point, and each
        asset contributes its last price at or before that time.

        Raises:
            InsufficientRefreshes: fewer than two refresh times exist
        """
        times = [s.times for s in series]
        grid = Synchronizer.refresh_grid(times, start)
        if grid.size < 2:
            raise InsufficientRefreshes(f"only {grid.size} refresh time(s) after {start}")
        rows = [s.log_prices[np.searchsorted(s.times, grid, side="right") - 1] for s in series]
        return SyncPanel(grid, np.vstack(rows), SyncScheme.REFRESH_TIME, [s.symbol for s in series])

    @staticmethod
    def to_returns(panel: SyncPanel) -> ReturnsMatrix:
        return ReturnsMatrix(np.diff(panel.log_prices, axis=1), panel.grid)

    @staticmethod
    def concat_returns(panels: Sequence[SyncPanel]) -> ReturnsMatrix:
        """
        Join the intraday returns of several days without the overnight
        returns between them. The returned grid is a running index.
        """
        if not panels:
            raise ValueError("no panels to concatenate")
        deltas = np.hstack([np.diff(p.log_prices, axis=1) for p in panels])
        return ReturnsMatrix(deltas, np.arange(deltas.shape[1] + 1))

    @staticmethod
    def refresh_retention(series: Sequence[TickSeries], start=0) -> Tuple[int, float, float]:
        """
        Data retained by refresh-time sampling.

        Returns:
            (number of refresh times, mean tick count per asset, expected
            refresh count for equal Poisson intensities, i.e. mean ticks
            divided by the p-th harmonic number)
        """
        grid = Synchronizer.refresh_grid([s.times for s in series], start)
        mean_ticks = float(np.mean([len(s) for s in series]))
        harmonic = float(np.sum(1.0 / np.arange(1, len(series) + 1)))
        expected = mean_ticks / harmonic
        logger.debug("refresh retention: %d of %.1f mean ticks (expected %.1f)",
                     grid.size, mean_ticks, expected)
        return int(grid.size), mean_ticks, expected
