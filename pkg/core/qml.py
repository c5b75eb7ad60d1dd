"""
Quasi-maximum-likelihood integrated volatility for ICV Shrink.

The observed returns of a scalar series are treated as Gaussian MA(1):
dY ~ N(0, Omega) with Omega tridiagonal Toeplitz, diagonal
sigma^2 * Delta + 2 a^2 and off-diagonal -a^2. Omega is diagonalized by
the type-I discrete sine transform, so the likelihood costs O(N log N).
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy.fft import dst
from scipy.optimize import minimize

from .exceptions import InvalidParams, NotOrthonormal
from .sync import ReturnsMatrix, SyncPanel

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class QmlFit:
    sigma2_hat: float   # integrated variance over the window (sigma^2 * N * Delta)
    a2_hat: float
    loglik: float
    iterations: int
    converged: bool
    spot_sigma2: float = 0.0  # sigma^2 per unit time


@dataclass(frozen=True)
class QmlOptions:
    max_iter: int = 500
    rel_tol: float = 1e-10
    newton_steps: int = 50
    fix_noise_zero: bool = False


@dataclass(frozen=True)
class TridiagToeplitz:
    """Symmetric tridiagonal Toeplitz matrix of size N."""
    N: int
    diag: float
    offdiag: float

    @classmethod
    def from_params(cls, N: int, sigma2: float, a2: float, delta: float) -> "TridiagToeplitz":
        return cls(N, sigma2 * delta + 2.0 * a2, -a2)

    def eigenvalues(self) -> np.ndarray:
        """diag + 2 * offdiag * cos(j pi / (N + 1)), j = 1..N."""
        j = np.arange(1, self.N + 1)
        return self.diag + 2.0 * self.offdiag * np.cos(j * np.pi / (self.N + 1))

    def dense(self) -> np.ndarray:
        return (np.diag(np.full(self.N, self.diag))
                + np.diag(np.full(self.N - 1, self.offdiag), 1)
                + np.diag(np.full(self.N - 1, self.offdiag), -1))


def _noise_weights(N: int) -> np.ndarray:
    """b_j = 2(1 - cos(j pi / (N + 1))), so lambda_j = sigma^2 Delta + a^2 b_j."""
    j = np.arange(1, N + 1)
    return 2.0 * (1.0 - np.cos(j * np.pi / (N + 1)))


def _loglik(theta: float, a2: float, c2: np.ndarray, b: np.ndarray) -> float:
    lam = theta + a2 * b
    if np.any(lam <= 0):
        return -np.inf
    return float(-0.5 * np.sum(np.log(lam)) - 0.5 * c2.size * LOG_2PI - 0.5 * np.sum(c2 / lam))


def _grad_hess(theta: float, a2: float, c2: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of the log-likelihood in (sigma^2 Delta, a^2)."""
    lam = theta + a2 * b
    inv = 1.0 / lam
    inv2 = inv * inv
    w = c2 * inv2 * inv
    g = np.array([
        -0.5 * inv.sum() + 0.5 * np.sum(c2 * inv2),
        -0.5 * np.sum(b * inv) + 0.5 * np.sum(b * c2 * inv2),
    ])
    h01 = 0.5 * np.sum(b * inv2) - np.sum(b * w)
    H = np.array([
        [0.5 * inv2.sum() - w.sum(), h01],
        [h01, 0.5 * np.sum(b * b * inv2) - np.sum(b * b * w)],
    ])
    return g, H


class QmlEstimator:
    """QML estimation of integrated volatility under MA(1) noise."""

    @staticmethod
    def sine_coordinates(dY: np.ndarray) -> np.ndarray:
        """Coordinates of dY in the common eigenbasis of every tridiagonal Toeplitz matrix."""
        return dst(np.asarray(dY, dtype=float), type=1, norm="ortho")

    @staticmethod
    def quasi_loglik(dY: np.ndarray, sigma2: float, a2: float, Delta: float) -> float:
        """
        -1/2 log det Omega - N/2 log 2 pi - 1/2 dY' Omega^-1 dY.

        Raises:
            InvalidParams: N < 2, sigma2 <= 0, a2 < 0 or a non-positive eigenvalue
        """
        dY = np.asarray(dY, dtype=float)
        N = dY.size
        if N < 2 or sigma2 <= 0 or a2 < 0:
            raise InvalidParams(f"quasi-likelihood needs N >= 2, sigma2 > 0, a2 >= 0 (N={N})")
        lam = TridiagToeplitz.from_params(N, sigma2, a2, Delta).eigenvalues()
        if np.any(lam <= 0):
            raise InvalidParams("covariance eigenvalue is not positive")
        c = QmlEstimator.sine_coordinates(dY)
        return float(-0.5 * np.sum(np.log(lam)) - 0.5 * N * LOG_2PI - 0.5 * np.sum(c * c / lam))

    @staticmethod
    def qml_fit(dY: np.ndarray, Delta: Optional[float] = None, window_length: Optional[float] = None,
                options: Optional[QmlOptions] = None) -> QmlFit:
        """
        Maximize the quasi-likelihood over sigma^2 > 0, a^2 >= 0.

        Args:
            dY: N >= 4 returns of one scalar series
            Delta: Return spacing (defaults to window_length / N)
            window_length: Length h of the window (defaults to N * Delta)
            options: Optimizer settings

        Returns:
            QmlFit whose sigma2_hat is the integrated variance over the
            window, sigma^2 * N * Delta
        """
        options = options or QmlOptions()
        dY = np.asarray(dY, dtype=float)
        N = dY.size
        if N < 4:
            raise InvalidParams(f"QML fit needs at least 4 returns, got {N}")
        if Delta is None and window_length is None:
            Delta = 1.0 / N
        if Delta is None:
            Delta = window_length / N

        # work on unit-RMS returns; the fit is exactly scale equivariant
        scale2 = float(np.mean(dY * dY))
        if scale2 == 0.0:
            raise InvalidParams("series has no variation")
        x = dY / np.sqrt(scale2)
        log_scale = 0.5 * N * np.log(scale2)

        c2 = QmlEstimator.sine_coordinates(x) ** 2
        b = _noise_weights(N)

        # a^2 = 0 has the closed form sigma^2 Delta = mean(dY^2) = 1 here
        boundary = (1.0, 0.0, _loglik(1.0, 0.0, c2, b))
        if options.fix_noise_zero:
            return QmlEstimator._result(boundary, scale2, N, Delta, log_scale, 0, True)

        r1 = float(np.mean(x[1:] * x[:-1]))
        a2_0 = -r1 if r1 < 0 else 1e-12
        theta_0 = max(1.0 - 2.0 * a2_0, 1e-4)

        def objective(u):
            value = _loglik(np.exp(u[0]), np.exp(u[1]), c2, b)
            return -value if np.isfinite(value) else np.inf

        res = minimize(objective, np.log([theta_0, a2_0]), method="Nelder-Mead",
                       options={"maxiter": options.max_iter, "xatol": 1e-10,
                                "fatol": options.rel_tol * max(1.0, abs(objective(np.log([theta_0, a2_0]))))})
        theta, a2 = float(np.exp(res.x[0])), float(np.exp(res.x[1]))
        converged = bool(res.success)
        iterations = int(res.nit)

        theta, a2, polished, steps = QmlEstimator._newton_polish(theta, a2, c2, b, options)
        iterations += steps
        converged = converged or polished

        best = (theta, a2, _loglik(theta, a2, c2, b))
        if boundary[2] >= best[2]:
            best = boundary
            converged = True
        if not converged:
            logger.warning("QML fit did not converge after %d iterations", iterations)
        return QmlEstimator._result(best, scale2, N, Delta, log_scale, iterations, converged)

    @staticmethod
    def _newton_polish(theta, a2, c2, b, options: QmlOptions):
        current = _loglik(theta, a2, c2, b)
        for step in range(1, options.newton_steps + 1):
            g, H = _grad_hess(theta, a2, c2, b)
            if np.linalg.norm(g * np.array([theta, max(a2, 1e-300)])) < 1e-9 * c2.size:
                return theta, a2, True, step
            try:
                move = -np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                break
            t = 1.0
            while t > 1e-8:
                cand = (theta + t * move[0], a2 + t * move[1])
                if cand[0] > 0 and cand[1] > 0:
                    value = _loglik(cand[0], cand[1], c2, b)
                    if value >= current:
                        break
                t *= 0.5
            else:
                break
            theta, a2 = cand
            improvement = value - current
            current = value
            if improvement <= options.rel_tol * abs(current):
                return theta, a2, True, step
        return theta, a2, False, options.newton_steps

    @staticmethod
    def _result(best, scale2, N, Delta, log_scale, iterations, converged) -> QmlFit:
        theta, a2, loglik = best
        theta *= scale2
        return QmlFit(
            sigma2_hat=theta * N,
            a2_hat=a2 * scale2,
            loglik=loglik - log_scale,
            iterations=iterations,
            converged=converged,
            spot_sigma2=theta / Delta,
        )

    @staticmethod
    def rotate_series(panel: Union[SyncPanel, ReturnsMatrix, np.ndarray], basis: np.ndarray) -> np.ndarray:
        """
        Returns of the rotated series u_i' Y, one row per basis column.

        Raises:
            NotOrthonormal: basis' basis differs from I by more than 1e-8
        """
        U = np.atleast_2d(np.asarray(basis, dtype=float))
        if U.shape[0] != U.shape[1] or np.abs(U.T @ U - np.eye(U.shape[1])).max() > 1e-8:
            raise NotOrthonormal("rotation basis is not orthonormal")
        if isinstance(panel, SyncPanel):
            return np.diff(U.T @ panel.log_prices, axis=1)
        deltas = panel.deltas if isinstance(panel, ReturnsMatrix) else np.atleast_2d(panel)
        return U.T @ deltas
