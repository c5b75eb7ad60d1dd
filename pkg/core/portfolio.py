"""
Portfolio construction for ICV Shrink.
GMV, Markowitz with momentum, gross-exposure-constrained GMV,
equal-weight baselines and the out-of-sample loss.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .exceptions import DegenerateSignal, InsufficientMomentumHistory, InvalidParams, NotPD

logger = logging.getLogger(__name__)

KKT_TOL = 1e-8


@dataclass
class Weights:
    w: np.ndarray
    strategy: str = ""
    date: Optional[str] = None

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if abs(self.w.sum() - 1.0) > 1e-10:
            raise ValueError(f"weights sum to {self.w.sum():.12g}, expected 1")

    @property
    def gross_exposure(self) -> float:
        return float(np.abs(self.w).sum())

    @property
    def p(self) -> int:
        return self.w.size


@dataclass
class MomentumSignal:
    e: np.ndarray   # trailing mean daily return per asset
    b: float        # target return: mean of the top-quintile entries of e

    @staticmethod
    def quintile_size(p: int) -> int:
        return math.ceil(p / 5)

    def top_indices(self) -> np.ndarray:
        """Top-quintile assets; ties go to the lower asset index."""
        order = np.argsort(-self.e, kind="stable")
        return np.sort(order[:self.quintile_size(self.e.size)])


class PortfolioBuilder:
    """Weights from covariance estimates and momentum signals."""

    @staticmethod
    def gmv_weights(Sigma_inv: np.ndarray, strategy: str = "GMV") -> Weights:
        """w = Sigma^-1 1 / (1' Sigma^-1 1)."""
        v = np.asarray(Sigma_inv, dtype=float).sum(axis=1)
        A = float(v.sum())
        if not A > 0:
            raise NotPD(f"1' Sigma^-1 1 = {A:.3g} is not positive")
        return Weights(v / A, strategy)

    @staticmethod
    def mwm_weights(Sigma_inv: np.ndarray, signal: MomentumSignal, strategy: str = "MwM") -> Weights:
        """
        Minimum variance subject to w'1 = 1 and w'e = b.

        Raises:
            DegenerateSignal: e is (numerically) collinear with 1
        """
        Sigma_inv = np.asarray(Sigma_inv, dtype=float)
        ones = np.ones(Sigma_inv.shape[0])
        si1 = Sigma_inv @ ones
        sie = Sigma_inv @ signal.e
        A, B, C = float(ones @ si1), float(ones @ sie), float(signal.e @ sie)
        if not A > 0:
            raise NotPD(f"1' Sigma^-1 1 = {A:.3g} is not positive")
        D = A * C - B * B
        if abs(D) <= 1e-12 * abs(A * C):
            raise DegenerateSignal(f"AC - B^2 = {D:.3g}; momentum is collinear with 1")
        c1 = (C - signal.b * B) / D
        c2 = (signal.b * A - B) / D
        w = c1 * si1 + c2 * sie
        return Weights(w / w.sum() if abs(w.sum() - 1.0) <= 1e-8 else w, strategy)

    @staticmethod
    def gmv_l1_weights(M1: np.ndarray, c: float = 1.2, strategy: str = "L1-GMV") -> Weights:
        """
        argmin w'M1 w subject to 1'w = 1 and ||w||_1 <= c.

        Solved as a QP in (w+, w-) >= 0, warm-started at the no-short-sale
        solution and finished by an active-set KKT solve.
        """
        if c < 1:
            raise InvalidParams(f"gross exposure bound must be >= 1, got {c}")
        M = 0.5 * (np.asarray(M1, dtype=float) + np.asarray(M1, dtype=float).T)
        p = M.shape[0]
        if p == 1:
            return Weights(np.ones(1), strategy)

        try:
            w_gmv = np.linalg.solve(M, np.ones(p))
            if w_gmv.sum() > 0:
                w_gmv /= w_gmv.sum()
                if np.abs(w_gmv).sum() <= c + 1e-12 and np.linalg.eigvalsh(M)[0] > 0:
                    return Weights(w_gmv, strategy)
        except np.linalg.LinAlgError:
            pass

        w_long = PortfolioBuilder._long_only(M)
        w = w_long if c == 1 else PortfolioBuilder._split_qp(M, c, w_long)
        w = PortfolioBuilder._kkt_polish(M, c, w)
        return Weights(w, strategy)

    @staticmethod
    def _long_only(M: np.ndarray) -> np.ndarray:
        p = M.shape[0]
        res = minimize(lambda w: w @ M @ w, np.full(p, 1.0 / p), jac=lambda w: 2.0 * M @ w,
                       method="SLSQP", bounds=[(0.0, None)] * p,
                       constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1.0,
                                     "jac": lambda w: np.ones(p)}],
                       options={"ftol": 1e-15, "maxiter": 1000})
        w = np.clip(res.x, 0.0, None)
        return w / w.sum()

    @staticmethod
    def _split_qp(M: np.ndarray, c: float, warm: np.ndarray) -> np.ndarray:
        p = M.shape[0]
        D = np.hstack([np.eye(p), -np.eye(p)])
        Q = D.T @ M @ D
        u0 = np.concatenate([np.clip(warm, 0, None), np.clip(-warm, 0, None)])
        res = minimize(lambda u: u @ Q @ u, u0, jac=lambda u: 2.0 * Q @ u, method="SLSQP",
                       bounds=[(0.0, None)] * (2 * p),
                       constraints=[
                           {"type": "eq", "fun": lambda u: D.sum(axis=0) @ u - 1.0,
                            "jac": lambda u: D.sum(axis=0)},
                           {"type": "ineq", "fun": lambda u: c - u.sum(),
                            "jac": lambda u: -np.ones(2 * p)},
                       ],
                       options={"ftol": 1e-15, "maxiter": 2000})
        if not res.success:
            logger.warning("L1-constrained QP: %s", res.message)
        return D @ res.x

    @staticmethod
    def _kkt_polish(M: np.ndarray, c: float, w: np.ndarray) -> np.ndarray:
        """Re-solve the equality-constrained QP on the identified active set."""
        scale = max(1.0, np.abs(w).max())
        free = np.flatnonzero(np.abs(w) > 1e-7 * scale)
        s = np.sign(w[free])
        rows = [np.ones(free.size)]
        rhs = [1.0]
        if np.any(s < 0) and np.any(s > 0) and abs(np.abs(w).sum() - c) < 1e-6:
            rows.append(s)
            rhs.append(c)
        A = np.vstack(rows)
        k = A.shape[0]
        kkt = np.block([[2.0 * M[np.ix_(free, free)], A.T], [A, np.zeros((k, k))]])
        try:
            sol = np.linalg.solve(kkt, np.concatenate([np.zeros(free.size), rhs]))
        except np.linalg.LinAlgError:
            return w
        cand = np.zeros_like(w)
        cand[free] = sol[:free.size]
        consistent = np.all(np.sign(cand[free]) == s) and np.abs(cand).sum() <= c + 1e-12
        if consistent and cand @ M @ cand <= w @ M @ w + KKT_TOL * max(1.0, abs(w @ M @ w)):
            return cand / cand.sum()
        return w / w.sum()

    @staticmethod
    def equal_weights(p: int, strategy: str = "EW") -> Weights:
        return Weights(np.full(p, 1.0 / p), strategy)

    @staticmethod
    def equal_weights_top_quintile(signal: MomentumSignal, strategy: str = "EW-TQ") -> Weights:
        w = np.zeros(signal.e.size)
        top = signal.top_indices()
        w[top] = 1.0 / top.size
        return Weights(w, strategy)

    @staticmethod
    def momentum_signal(daily_log_returns: np.ndarray, lookback: int = 250) -> MomentumSignal:
        """
        Trailing mean of the last `lookback` daily log-returns and the
        top-quintile mean as target return.

        Args:
            daily_log_returns: p x T matrix, most recent day last
        """
        R = np.atleast_2d(np.asarray(daily_log_returns, dtype=float))
        if R.shape[1] < lookback:
            raise InsufficientMomentumHistory(lookback, R.shape[1])
        e = R[:, -lookback:].mean(axis=1)
        signal = MomentumSignal(e, 0.0)
        signal.b = float(e[signal.top_indices()].mean())
        return signal

    @staticmethod
    def oos_loss(Sigma_hat: np.ndarray, Sigma_true: np.ndarray, inverse: bool = False) -> float:
        """
        1' S^-1 Sigma S^-1 1 / (1' S^-1 1)^2, the variance of the GMV
        portfolio built from S. Pass inverse=True when Sigma_hat already
        holds S^-1.
        """
        p = Sigma_true.shape[0]
        x = Sigma_hat @ np.ones(p) if inverse else np.linalg.solve(Sigma_hat, np.ones(p))
        return float(x @ Sigma_true @ x / x.sum() ** 2)
