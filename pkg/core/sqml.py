"""
Sample-splitting shrinkage QML estimator for ICV Shrink.

Eigenvectors come from a TVA realized covariance over an earlier window;
eigenvalues are re-estimated by QML on the rotated high-frequency series
of later days, so the two pieces are estimated from disjoint samples.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .estimators import CovarianceEstimators
from .exceptions import DayPoolEmpty, InvalidConfig
from .parallel import map_ordered
from .qml import QmlEstimator, QmlFit, QmlOptions
from .spectral import SpectralTools
from .sync import ReturnsMatrix, SyncPanel

logger = logging.getLogger(__name__)

MIN_DAY_RETURNS = 4


class SqmlVariant(Enum):
    SQRM = "SQrM"  # eigenvectors from 15-minute intraday returns
    SQRD = "SQrD"  # eigenvectors from daily closes


@dataclass(frozen=True)
class SqmlConfig:
    variant: SqmlVariant = SqmlVariant.SQRD
    J: int = 51
    J1: int = 50
    holding_days: float = 1.0

    def __post_init__(self):
        if not (1 <= self.J1 < self.J):
            raise InvalidConfig(f"need 1 <= J1 < J, got J1={self.J1}, J={self.J}")
        if not (1 <= self.J - self.J1 <= 5):
            raise InvalidConfig(f"J - J1 must be in [1, 5], got {self.J - self.J1}")
        if self.holding_days <= 0:
            raise InvalidConfig("holding period must be positive")

    @property
    def dense_days(self) -> int:
        return self.J - self.J1

    @property
    def fifteen_min(self) -> bool:
        return self.variant is SqmlVariant.SQRM


@dataclass
class SqmlEstimate:
    basis: np.ndarray
    v_hat: np.ndarray
    day_v_hat: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    nonconverged: List[Tuple[int, int]] = field(default_factory=list)  # (day, direction)
    dropped_days: List[int] = field(default_factory=list)

    @property
    def p(self) -> int:
        return self.v_hat.size

    @property
    def sigma_hat(self) -> np.ndarray:
        return (self.basis * self.v_hat) @ self.basis.T

    @property
    def sigma_inv_hat(self) -> np.ndarray:
        return (self.basis / self.v_hat) @ self.basis.T


class ShrinkageQML:
    """Assembly of the sample-splitting shrinkage QML estimator."""

    @staticmethod
    def eigenbasis_from_history(panel: Union[SyncPanel, ReturnsMatrix]) -> np.ndarray:
        """Sign-fixed eigenvectors (non-increasing eigenvalues) of the TVA matrix of the history window."""
        R = panel.returns() if isinstance(panel, SyncPanel) else panel
        if R.p == 1:
            return np.ones((1, 1))
        tva = CovarianceEstimators.tva_cov(R)
        return SpectralTools.sym_eig(tva.matrix).vectors

    @staticmethod
    def sqml_estimate(cfg: SqmlConfig, history_panel: Union[SyncPanel, ReturnsMatrix],
                      dense_days: Sequence[SyncPanel], threads: Optional[int] = 1,
                      options: Optional[QmlOptions] = None,
                      basis: Optional[np.ndarray] = None) -> SqmlEstimate:
        """
        Build the estimate and its inverse.

        Args:
            cfg: Variant, J, J1 and holding period
            history_panel: Panel (or returns) of the eigenvector window
            dense_days: Refresh-time panels of the J - J1 later days
            threads: Worker threads for the per-direction QML fits
            options: QML optimizer settings
            basis: Precomputed eigenbasis (skips the history step)

        Returns:
            SqmlEstimate with v_hat = (holding_days / days used) * sum of
            the per-day QML integrated variances

        Raises:
            InvalidConfig: the number of dense days does not match cfg
            DayPoolEmpty: every dense day has fewer than 4 returns
        """
        if len(dense_days) != cfg.dense_days:
            raise InvalidConfig(f"expected {cfg.dense_days} dense days, got {len(dense_days)}")
        U = ShrinkageQML.eigenbasis_from_history(history_panel) if basis is None else basis

        kept, dropped = [], []
        for l, day in enumerate(dense_days):
            if day.n < MIN_DAY_RETURNS:
                logger.warning("dense day %d has %d refresh returns, dropped", l, day.n)
                dropped.append(l)
            else:
                kept.append(l)
        if not kept:
            raise DayPoolEmpty(f"all {len(dense_days)} dense days dropped")

        jobs = []
        for l in kept:
            day = dense_days[l]
            rotated = QmlEstimator.rotate_series(day, U)
            window = float(day.grid[-1] - day.grid[0])
            delta = window / day.n if window > 0 else 1.0 / day.n
            jobs.extend((l, i, rotated[i], delta) for i in range(U.shape[1]))

        fits: List[QmlFit] = map_ordered(
            lambda job: QmlEstimator.qml_fit(job[2], Delta=job[3], options=options), jobs, threads)

        p = U.shape[1]
        day_v = np.array([f.sigma2_hat for f in fits]).reshape(len(kept), p)
        nonconverged = [(job[0], job[1]) for job, f in zip(jobs, fits) if not f.converged]
        if nonconverged:
            logger.warning("%d QML fit(s) did not converge; using best points", len(nonconverged))

        v_hat = cfg.holding_days / len(kept) * day_v.sum(axis=0)
        return SqmlEstimate(U, v_hat, day_v, nonconverged, dropped)

    @staticmethod
    def oracle_shrinkage(U: np.ndarray, Sigma_true: np.ndarray) -> np.ndarray:
        """u_i' Sigma u_i, the Frobenius-optimal eigenvalues for basis U."""
        return np.einsum("ji,jk,ki->i", U, Sigma_true, U)

    @staticmethod
    def naive_realized_eigenvalues(U: np.ndarray, returns: Union[ReturnsMatrix, np.ndarray]) -> np.ndarray:
        """sum_k (u_i' dX_k)^2 on the same returns the basis was estimated from."""
        D = returns.deltas if isinstance(returns, ReturnsMatrix) else np.atleast_2d(returns)
        proj = U.T @ D
        return np.einsum("ij,ij->i", proj, proj)
