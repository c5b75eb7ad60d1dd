"""
Covariance estimators for ICV Shrink.
Realized covariance, TVA realized covariance, daily sample covariance,
linear shrinkage towards a scaled identity and pairwise two-scale
covariance.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from itertools import combinations_with_replacement
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import DegenerateReturn, InvalidParams, PairTooSparse
from .ingest import TickSeries
from .parallel import map_ordered
from .sync import ReturnsMatrix, SyncPanel, Synchronizer

logger = logging.getLogger(__name__)


class CovKind(Enum):
    RCV = "RCV"
    TVA = "TVA"
    SAMPLE = "SAMPLE"
    LS = "LS"
    TSCV = "TSCV"
    SQML = "SQML"


@dataclass
class CovEstimate:
    """A p x p covariance estimate with provenance."""
    matrix: np.ndarray
    kind: CovKind
    window: Tuple[float, float] = (0.0, 0.0)
    n_obs: int = 0

    @property
    def p(self) -> int:
        return self.matrix.shape[0]


@dataclass
class LinearShrinkageDiagnostics:
    kappa: float
    lambda_bar: float
    d2: float
    b2: float
    b2_bar: float
    spherical: bool = False  # sample covariance was already a multiple of I


def _as_deltas(R: Union[ReturnsMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(R, ReturnsMatrix):
        return R.deltas
    return np.atleast_2d(np.asarray(R, dtype=float))


def _window(R) -> Tuple[float, float]:
    if isinstance(R, ReturnsMatrix) and R.grid.size:
        return (R.grid[0], R.grid[-1])
    return (0.0, 0.0)


class CovarianceEstimators:
    """Covariance estimators that feed the portfolio layer."""

    @staticmethod
    def realized_cov(R: Union[ReturnsMatrix, np.ndarray]) -> CovEstimate:
        """Sum of outer products of the return columns."""
        D = _as_deltas(R)
        return CovEstimate(D @ D.T, CovKind.RCV, _window(R), D.shape[1])

    @staticmethod
    def self_normalized(R: Union[ReturnsMatrix, np.ndarray],
                        drop_degenerate: bool = True) -> Tuple[np.ndarray, float, int]:
        """
        The self-normalized sum of dY dY' / |dY|^2.

        Returns:
            (normalized matrix, total squared norm, number of columns used)

        Raises:
            DegenerateReturn: a zero-norm column when drop_degenerate is False,
                or every column has zero norm
        """
        D = _as_deltas(R)
        sq = np.einsum("ij,ij->j", D, D)
        zero = np.flatnonzero(sq == 0.0)
        if zero.size:
            if not drop_degenerate or zero.size == sq.size:
                raise DegenerateReturn(int(zero[0]))
            logger.warning("dropping %d zero-norm return column(s), first at %d", zero.size, zero[0])
            keep = sq > 0.0
            D, sq = D[:, keep], sq[keep]
        U = D / np.sqrt(sq)
        return U @ U.T, float(sq.sum()), D.shape[1]

    @staticmethod
    def tva_cov(R: Union[ReturnsMatrix, np.ndarray], drop_degenerate: bool = True) -> CovEstimate:
        """
        TVA realized covariance [tr(sum dY dY') / n] * sum dY dY' / |dY|^2.

        Zero-norm columns are dropped (and n reduced) with a warning.
        """
        normalized, trace, n = CovarianceEstimators.self_normalized(R, drop_degenerate)
        return CovEstimate(trace / n * normalized, CovKind.TVA, _window(R), n)

    @staticmethod
    def daily_returns(daily_logprices: Union[SyncPanel, np.ndarray]) -> np.ndarray:
        prices = daily_logprices.log_prices if isinstance(daily_logprices, SyncPanel) else \
            np.atleast_2d(np.asarray(daily_logprices, dtype=float))
        return np.diff(prices, axis=1)

    @staticmethod
    def sample_cov_daily(daily_logprices: Union[SyncPanel, np.ndarray]) -> CovEstimate:
        """(1/J) sum of daily return outer products, without demeaning."""
        X = CovarianceEstimators.daily_returns(daily_logprices)
        J = X.shape[1]
        if J < 1:
            raise InvalidParams("need at least one daily return")
        window = (daily_logprices.grid[0], daily_logprices.grid[-1]) \
            if isinstance(daily_logprices, SyncPanel) else (0.0, float(J))
        return CovEstimate(X @ X.T / J, CovKind.SAMPLE, window, J)

    @staticmethod
    def linear_shrinkage(S: CovEstimate,
                         returns: Union[ReturnsMatrix, np.ndarray]) -> Tuple[CovEstimate, LinearShrinkageDiagnostics]:
        """
        Shrink a daily sample covariance towards lambda_bar * I.

        Args:
            S: Sample covariance built from the same returns
            returns: p x J daily return vectors (columns)

        Returns:
            (shrunk estimate, diagnostics)
        """
        X = _as_deltas(returns)
        p, J = X.shape
        if J < 2:
            raise InvalidParams("linear shrinkage needs J >= 2 return vectors")
        M = S.matrix
        lambda_bar = float(np.trace(M)) / p
        d2 = float(np.sum((M - lambda_bar * np.eye(p)) ** 2)) / p

        # ||x x' - S||_F^2 = |x|^4 - 2 x'Sx + ||S||_F^2
        sq = np.einsum("ij,ij->j", X, X)
        quad = np.einsum("ij,ik,kj->j", X, M, X)
        b2_bar = float(np.sum(sq ** 2 - 2.0 * quad + np.sum(M * M))) / (J ** 2 * p)
        b2_bar = max(b2_bar, 0.0)

        if d2 <= 1e-15 * max(lambda_bar ** 2, 1e-300):
            diag = LinearShrinkageDiagnostics(1.0, lambda_bar, d2, min(b2_bar, d2), b2_bar, spherical=True)
            logger.debug("sample covariance already spherical; kappa set to 1")
        else:
            b2 = min(b2_bar, d2)
            diag = LinearShrinkageDiagnostics(b2 / d2, lambda_bar, d2, b2, b2_bar)
        shrunk = (1.0 - diag.kappa) * M + diag.kappa * lambda_bar * np.eye(p)
        return CovEstimate(shrunk, CovKind.LS, S.window, S.n_obs), diag

    @staticmethod
    def subsampled_cov(x: np.ndarray, y: np.ndarray, scale: int) -> float:
        """Average realized covariance over the `scale` offset sub-grids of lag `scale`."""
        dx = x[scale:] - x[:-scale]
        dy = y[scale:] - y[:-scale]
        return float(dx @ dy) / scale

    @staticmethod
    def two_scale(x: np.ndarray, y: np.ndarray, K: int, J: int, small_sample: bool = True) -> float:
        """Two-scale covariance of two synchronous log-price vectors."""
        n = x.size - 1
        nbar_k = (n - K + 1) / K
        nbar_j = (n - J + 1) / J
        ratio = nbar_k / nbar_j
        value = CovarianceEstimators.subsampled_cov(x, y, K) - ratio * CovarianceEstimators.subsampled_cov(x, y, J)
        return value / (1.0 - ratio) if small_sample else value

    @staticmethod
    def tscv_pairwise(series: Sequence[TickSeries], window: Optional[Tuple[float, float]] = None,
                      K: int = 10, J: int = 1, threads: Optional[int] = 1,
                      small_sample: bool = True) -> CovEstimate:
        """
        Pairwise two-scale covariance.

        Each pair is synchronized by its own refresh times inside the
        window; the diagonal uses each asset's own ticks. The result is
        returned unprojected.

        Args:
            series: One TickSeries per asset
            window: (start, end) in the series' time units; defaults to the session
            K: Slow scale
            J: Fast scale, 1 <= J < K
            threads: Worker threads for the pair computations
            small_sample: Divide by 1 - nbar_K / nbar_J

        Raises:
            InvalidParams: K <= J or J < 1
            PairTooSparse: a pair has fewer than K + 1 refresh times
        """
        if not (K > J >= 1):
            raise InvalidParams(f"two-scale estimator needs K > J >= 1, got K={K}, J={J}")
        if window is None:
            window = series[0].session
        start, end = window
        clipped = [s.window(start, end) for s in series]
        p = len(series)

        def entry(pair):
            i, j = pair
            if i == j:
                x = clipped[i].log_prices
                y = x
            else:
                grid = Synchronizer.refresh_grid([clipped[i].times, clipped[j].times], start)
                if grid.size < K + 1:
                    raise PairTooSparse(i, j, int(grid.size))
                x = clipped[i].log_prices[np.searchsorted(clipped[i].times, grid, side="right") - 1]
                y = clipped[j].log_prices[np.searchsorted(clipped[j].times, grid, side="right") - 1]
            if x.size < K + 1:
                raise PairTooSparse(i, j, int(x.size))
            return CovarianceEstimators.two_scale(x, y, K, J, small_sample), x.size - 1

        pairs = list(combinations_with_replacement(range(p), 2))
        results = map_ordered(entry, pairs, threads)
        M = np.empty((p, p))
        for (i, j), (value, _) in zip(pairs, results):
            M[i, j] = M[j, i] = value
        n_obs = min(n for _, n in results)
        return CovEstimate(M, CovKind.TSCV, (start, end), n_obs)
