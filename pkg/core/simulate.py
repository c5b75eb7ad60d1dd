"""
Class-C diffusion simulator for ICV Shrink.
Generates latent log-price paths dX_t = gamma_t * Lambda dB_t, noisy
observations and Poisson trading times, together with the exact
integrated covariance of any window.

Time is measured in trading days: the session of day d is [d, d + 1].
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .exceptions import InvalidConfig, InvalidNoiseCov
from .ingest import Session, TickCleaner, TickSeries

logger = logging.getLogger(__name__)

DEFAULT_LOG_PRICE = float(np.log(100.0))


@dataclass(frozen=True)
class GammaPath:
    """Piecewise-constant, right-continuous scalar volatility gamma_t."""
    knots: Tuple[float, ...] = (0.0,)
    values: Tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if len(self.knots) != len(self.values) or not self.knots:
            raise InvalidConfig("gamma path needs one value per knot")
        if np.any(np.diff(self.knots) <= 0):
            raise InvalidConfig("gamma knots must be strictly increasing")

    @classmethod
    def constant(cls, value: float = 1.0) -> "GammaPath":
        return cls((0.0,), (float(value),))

    @classmethod
    def piecewise(cls, knots: Sequence[float], values: Sequence[float]) -> "GammaPath":
        return cls(tuple(float(k) for k in knots), tuple(float(v) for v in values))

    @classmethod
    def alternating(cls, horizon: float, pieces: int, values: Sequence[float] = (1.0, 2.0)) -> "GammaPath":
        """Cycle through values on `pieces` equal sub-intervals of [0, horizon]."""
        knots = np.linspace(0.0, horizon, pieces, endpoint=False)
        return cls.piecewise(knots, [values[k % len(values)] for k in range(pieces)])

    def __call__(self, t) -> np.ndarray:
        idx = np.searchsorted(self.knots, t, side="right") - 1
        return np.asarray(self.values)[np.clip(idx, 0, None)]

    def bounds(self) -> Tuple[float, float]:
        return float(min(self.values)), float(max(self.values))

    def integrate_sq(self, a: float, b: float) -> float:
        """Exact integral of gamma_t^2 over [a, b]."""
        if b < a:
            raise ValueError("integration window reversed")
        edges = np.append(np.asarray(self.knots, dtype=float), np.inf)
        # the first piece also covers anything before the first knot
        edges[0] = -np.inf
        vals = np.asarray(self.values, dtype=float)
        lo = np.clip(edges[:-1], a, b)
        hi = np.clip(edges[1:], a, b)
        return float(np.sum(vals ** 2 * (hi - lo)))


@dataclass(frozen=True, eq=False)
class ClassCModel:
    """
    Class-C diffusion with IID microstructure noise.

    Observed log-prices are Y = X + eps, eps ~ N(0, noise_cov), and
    dX_t = mu_t dt + gamma_t * Lambda dB_t with tr(Lambda Lambda') = p.
    With tick intensities the noise covariance must be diagonal.
    """
    lambda_matrix: np.ndarray
    gamma_path: GammaPath = field(default_factory=GammaPath)
    noise_cov: Optional[np.ndarray] = None
    drift: Optional[Callable[[float], np.ndarray]] = None
    tick_intensity: Optional[np.ndarray] = None  # expected ticks per day, per asset
    seed: int = 0
    c0: float = 100.0

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.lambda_matrix, dtype=float))
        object.__setattr__(self, "lambda_matrix", lam)
        p = lam.shape[0]
        if lam.shape != (p, p):
            raise InvalidConfig("Lambda must be square")
        trace = float(np.sum(lam * lam))
        if abs(trace - p) > 1e-10 * p:
            raise InvalidConfig(f"tr(Lambda Lambda') = {trace:.12g}, expected {p}")
        lo, hi = self.gamma_path.bounds()
        if not (1.0 / self.c0 < lo and hi < self.c0):
            raise InvalidConfig(f"gamma must lie in ({1.0 / self.c0:g}, {self.c0:g})")

        noise = np.zeros((p, p)) if self.noise_cov is None else np.atleast_2d(
            np.asarray(self.noise_cov, dtype=float))
        if noise.shape != (p, p) or not np.allclose(noise, noise.T, atol=1e-12):
            raise InvalidNoiseCov("noise covariance must be a symmetric p x p matrix")
        if p and np.linalg.eigvalsh(noise)[0] < -1e-12 * max(1.0, np.abs(noise).max()):
            raise InvalidNoiseCov("noise covariance is not positive semi-definite")
        object.__setattr__(self, "noise_cov", noise)

        if self.tick_intensity is not None:
            rate = np.broadcast_to(np.asarray(self.tick_intensity, dtype=float), (p,)).copy()
            if np.any(rate <= 0):
                raise InvalidConfig("tick intensities must be positive")
            object.__setattr__(self, "tick_intensity", rate)
            if np.any(noise != np.diag(np.diag(noise))):
                raise InvalidNoiseCov("asynchronous trading needs a diagonal noise covariance")

    @property
    def p(self) -> int:
        return self.lambda_matrix.shape[0]

    @property
    def covariance_shape(self) -> np.ndarray:
        """Lambda Lambda', the time-invariant part of the ICV."""
        return self.lambda_matrix @ self.lambda_matrix.T

    @staticmethod
    def normalized_lambda(matrix: np.ndarray) -> np.ndarray:
        """Rescale a matrix so that tr(M M') = p."""
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        return matrix * np.sqrt(matrix.shape[0] / np.sum(matrix * matrix))

    @staticmethod
    def lambda_from_spectrum(eigenvalues: Sequence[float],
                             rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """
        Lambda with Lambda Lambda' = U diag(eigenvalues) U' (U Haar-random
        when rng is given, else the identity), rescaled to tr = p.
        """
        eig = np.asarray(eigenvalues, dtype=float)
        root = np.diag(np.sqrt(eig))
        if rng is not None:
            q, r = np.linalg.qr(rng.standard_normal((eig.size, eig.size)))
            root = (q * np.sign(np.diag(r))) @ root
        return ClassCModel.normalized_lambda(root)


@dataclass
class TruePathRecord:
    """A simulated path: latent fine grid, observed ticks and the model."""
    model: ClassCModel
    horizon: float
    fine_times: np.ndarray
    latent: np.ndarray                 # p x (fine_steps + 1)
    tick_times: List[np.ndarray]       # per asset, in days
    tick_log_prices: List[np.ndarray]  # per asset, noisy

    @property
    def p(self) -> int:
        return self.model.p

    def true_icv(self, a: float = 0.0, b: Optional[float] = None) -> np.ndarray:
        return PathSimulator.true_icv(self.model, (a, self.horizon if b is None else b))

    def tick_series(self) -> List[TickSeries]:
        """Observed ticks as TickSeries with times in days."""
        return [TickSeries(f"S{i:03d}", t, y, (0.0, self.horizon))
                for i, (t, y) in enumerate(zip(self.tick_times, self.tick_log_prices))]

    def day_series(self, day: int, session: Optional[Session] = None) -> List[TickSeries]:
        """
        Ticks of one day as TickSeries in ns since session open, the form
        produced by ingest. Ticks that round onto the same nanosecond keep
        the later one.
        """
        session = session or Session()
        out = []
        for i, (t, y) in enumerate(zip(self.tick_times, self.tick_log_prices)):
            lo = np.searchsorted(t, day, side="left")
            hi = np.searchsorted(t, day + 1, side="right") if day + 1 >= self.horizon else \
                np.searchsorted(t, day + 1, side="left")
            ns = np.round((t[lo:hi] - day) * session.length_ns).astype(np.int64)
            keep = np.append(np.diff(ns) > 0, True)
            out.append(TickSeries(f"S{i:03d}", ns[keep], y[lo:hi][keep], session.normalized()))
        return out


class PathSimulator:
    """Simulation of Class-C price paths and their ground truth."""

    @staticmethod
    def replication_seeds(seed: int, count: int) -> List[np.random.SeedSequence]:
        """Independent child seeds for parallel replications."""
        return np.random.SeedSequence(seed).spawn(count)

    @staticmethod
    def true_icv(model: ClassCModel, window: Tuple[float, float]) -> np.ndarray:
        """Integrated covariance over window: (integral of gamma^2) * Lambda Lambda'."""
        a, b = window
        return model.gamma_path.integrate_sq(a, b) * model.covariance_shape

    @staticmethod
    def simulate_increments(model: ClassCModel, n: int, horizon: float = 1.0,
                            rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """
        Exact latent increments on an equally spaced n-step grid of
        [0, horizon]: dX_k = sqrt(integral of gamma^2 over step k) * Lambda z_k.

        Returns:
            p x n matrix of increments
        """
        rng = rng or np.random.default_rng(model.seed)
        edges = np.linspace(0.0, horizon, n + 1)
        scale = np.sqrt([model.gamma_path.integrate_sq(a, b) for a, b in zip(edges[:-1], edges[1:])])
        return (model.lambda_matrix @ rng.standard_normal((model.p, n))) * scale

    @staticmethod
    def simulate_paths(model: ClassCModel, fine_steps: int, horizon: float = 1.0,
                       rng: Optional[np.random.Generator] = None,
                       anchor_times: Sequence[float] = (0.0,),
                       x0: float = DEFAULT_LOG_PRICE) -> TruePathRecord:
        """
        Euler simulation of the latent path plus noisy observations.

        Args:
            model: Class-C model
            fine_steps: Number of Euler steps on [0, horizon]
            horizon: Length of the simulated period in days
            rng: Generator (defaults to one seeded with model.seed)
            anchor_times: Times at which every asset is forced to trade
                (day opens, so previous-tick sampling has a first price)
            x0: Initial log-price of every asset

        Returns:
            TruePathRecord; without tick intensities every asset trades at
            every fine grid point
        """
        if fine_steps < 1 or horizon <= 0:
            raise InvalidConfig("fine_steps must be >= 1 and horizon > 0")
        rng = rng or np.random.default_rng(model.seed)
        p = model.p
        dt = horizon / fine_steps
        times = np.linspace(0.0, horizon, fine_steps + 1)

        scale = model.gamma_path(times[:-1]) * np.sqrt(dt)
        increments = (model.lambda_matrix @ rng.standard_normal((p, fine_steps))) * scale
        if model.drift is not None:
            increments += np.column_stack([model.drift(t) for t in times[:-1]]) * dt
        latent = np.empty((p, fine_steps + 1))
        latent[:, 0] = x0
        np.cumsum(increments, axis=1, out=latent[:, 1:])
        latent[:, 1:] += x0

        noise_root = PathSimulator._noise_root(model.noise_cov)
        tick_times, tick_prices = [], []
        if model.tick_intensity is None:
            eps = noise_root @ rng.standard_normal((p, fine_steps + 1))
            observed = latent + eps
            tick_times = [times.copy() for _ in range(p)]
            tick_prices = [observed[i].copy() for i in range(p)]
        else:
            anchors = np.asarray(anchor_times, dtype=float)
            for i in range(p):
                count = rng.poisson(model.tick_intensity[i] * horizon)
                t = np.unique(np.concatenate([anchors, rng.uniform(0.0, horizon, count)]))
                idx = np.minimum(np.floor(t / dt).astype(np.int64), fine_steps)
                noise_sd = np.sqrt(model.noise_cov[i, i])
                tick_times.append(t)
                tick_prices.append(latent[i, idx] + noise_sd * rng.standard_normal(t.size))

        logger.debug("simulated p=%d, %d fine steps over %.3g days", p, fine_steps, horizon)
        return TruePathRecord(model, horizon, times, latent, tick_times, tick_prices)

    @staticmethod
    def _noise_root(noise_cov: np.ndarray) -> np.ndarray:
        vals, vecs = np.linalg.eigh(noise_cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))

    @staticmethod
    def daily_closes(record: TruePathRecord, days: Optional[int] = None) -> np.ndarray:
        """
        Observed closing log-prices: column 0 is the first open, column d+1
        the last observed price of day d. A tick exactly at d+1 opens day
        d+1, except on the last simulated day (same split as day_series).
        """
        days = int(round(record.horizon)) if days is None else days
        cols = []
        for t, y in zip(record.tick_times, record.tick_log_prices):
            idx = np.empty(days + 1, dtype=np.int64)
            idx[0] = np.searchsorted(t, 0.0, side="right") - 1
            for d in range(days):
                side = "right" if d + 1 >= record.horizon else "left"
                idx[d + 1] = np.searchsorted(t, d + 1, side=side) - 1
            cols.append(y[np.clip(idx, 0, None)])
        return np.vstack(cols)

    @staticmethod
    def write_tick_files(record: TruePathRecord, out_dir: Union[str, Path],
                         session: Optional[Session] = None) -> List[Path]:
        """
        Write one raw tick file per simulated day in the ingest schema.

        Returns:
            Paths of the written files, day order
        """
        session = session or Session()
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for day in range(int(round(record.horizon))):
            frames = []
            for s in record.day_series(day, session):
                frames.append(pd.DataFrame({
                    "symbol": s.symbol,
                    "timestamp": [TickCleaner.format_timestamp(t + session.open_ns) for t in s.times],
                    "price": np.exp(s.log_prices),
                    "cond": "",
                    "corr": 0,
                }))
            path = out_dir / f"day_{day:03d}.csv"
            pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format="%.17g")
            written.append(path)
        logger.info("wrote %d tick files to %s", len(written), out_dir)
        return written
