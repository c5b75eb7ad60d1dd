"""
Backtesting for ICV Shrink.
Daily-rebalanced out-of-sample evaluation of covariance estimator and
optimizer pairs, with annualized metrics, parameter sweeps, rolling
windows and sub-period splits.
"""

import itertools
import logging
import math
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .estimators import CovarianceEstimators
from .exceptions import EmptyEvaluationWindow, IcvError, InvalidConfig
from .ingest import CleaningRules, Session, TickCleaner, TickSeries
from .parallel import map_ordered
from .portfolio import MomentumSignal, PortfolioBuilder, Weights
from .spectral import SpectralTools
from .sqml import ShrinkageQML, SqmlConfig, SqmlEstimate, SqmlVariant
from .sync import SyncPanel, SyncScheme, Synchronizer

logger = logging.getLogger(__name__)

TRADING_DAYS = 252
ROLLING_WINDOW = 42


class EstimatorKind(Enum):
    SQRM = "SQrM"
    SQRD = "SQrD"
    LS = "LS"
    TS = "TS"
    SP = "SP"
    EW = "EW"
    EW_TQ = "EW-TQ"


class OptimizerKind(Enum):
    GMV = "GMV"
    MWM = "MwM"
    L1_GMV = "L1-GMV"
    EW = "EW"
    EW_TQ = "EW-TQ"


class Objective(Enum):
    MIN_SD = "minSD"
    MAX_IR = "maxIR"
    MIN_ROLLING_SD = "minRollingSD"
    MAX_ROLLING_IR = "maxRollingIR"


@dataclass(frozen=True)
class StrategySpec:
    name: str
    estimator: EstimatorKind
    optimizer: OptimizerKind = OptimizerKind.GMV
    J1: int = 50
    dense_days: int = 1
    J_LS: int = 100
    J_TS: int = 5
    J_SP: int = 100
    c: float = 1.2
    tscv_K: int = 10
    tscv_J: int = 1
    holding_days: float = 1.0
    momentum_lookback: int = 250

    def __post_init__(self):
        if self.estimator is EstimatorKind.EW and self.optimizer is not OptimizerKind.EW:
            object.__setattr__(self, "optimizer", OptimizerKind.EW)
        if self.estimator is EstimatorKind.EW_TQ and self.optimizer is not OptimizerKind.EW_TQ:
            object.__setattr__(self, "optimizer", OptimizerKind.EW_TQ)

    @property
    def J(self) -> int:
        return self.J1 + self.dense_days

    def validate(self, strict: bool = False) -> "StrategySpec":
        """
        Check parameters; strict also enforces the published search ranges
        (J_LS and J_SP in 50..250 step 10, J_TS in 1..10, J1 in 5..21 for
        SQrM or 50..250 step 10 for SQrD, J - J1 in 1..5).
        """
        if min(self.J1, self.dense_days, self.J_LS, self.J_TS, self.J_SP) < 1:
            raise InvalidConfig(f"{self.name}: window lengths must be positive")
        if self.J_LS < 2:
            raise InvalidConfig(f"{self.name}: linear shrinkage needs J_LS >= 2")
        if self.c < 1:
            raise InvalidConfig(f"{self.name}: gross exposure bound must be >= 1")
        if not (self.tscv_K > self.tscv_J >= 1):
            raise InvalidConfig(f"{self.name}: two-scale estimator needs K > J >= 1")
        if self.estimator in (EstimatorKind.SQRM, EstimatorKind.SQRD):
            self.sqml_config()
        if strict:
            decades = range(50, 251, 10)
            checks = {
                EstimatorKind.LS: self.J_LS in decades,
                EstimatorKind.SP: self.J_SP in decades,
                EstimatorKind.TS: 1 <= self.J_TS <= 10,
                EstimatorKind.SQRM: 5 <= self.J1 <= 21 and 1 <= self.dense_days <= 5,
                EstimatorKind.SQRD: self.J1 in decades and 1 <= self.dense_days <= 5,
            }
            if not checks.get(self.estimator, True):
                raise InvalidConfig(f"{self.name}: parameters outside the published grid")
        return self

    def sqml_config(self) -> SqmlConfig:
        variant = SqmlVariant.SQRM if self.estimator is EstimatorKind.SQRM else SqmlVariant.SQRD
        return SqmlConfig(variant, self.J, self.J1, self.holding_days)

    def lookback(self) -> int:
        """Number of prior days a weight computation needs."""
        need = {
            EstimatorKind.SQRM: self.J,
            EstimatorKind.SQRD: self.J,
            EstimatorKind.LS: self.J_LS,
            EstimatorKind.TS: self.J_TS,
            EstimatorKind.SP: self.J_SP,
        }.get(self.estimator, 0)
        if self.optimizer in (OptimizerKind.MWM, OptimizerKind.EW_TQ):
            need = max(need, self.momentum_lookback)
        return need


PUBLISHED_GRIDS: Dict[EstimatorKind, Dict[str, Sequence[int]]] = {
    EstimatorKind.SQRD: {"J1": list(range(50, 251, 10)), "dense_days": list(range(1, 6))},
    EstimatorKind.SQRM: {"J1": list(range(5, 22)), "dense_days": list(range(1, 6))},
    EstimatorKind.LS: {"J_LS": list(range(50, 251, 10))},
    EstimatorKind.SP: {"J_SP": list(range(50, 251, 10))},
    EstimatorKind.TS: {"J_TS": list(range(1, 11))},
}


@dataclass
class DayData:
    """One trading day of cleaned ticks, times in ns since session open."""
    label: str
    series: List[TickSeries]
    session: Session = field(default_factory=Session)
    _panels: Dict[str, SyncPanel] = field(default_factory=dict, init=False, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False, compare=False)

    def _panel(self, key: str, build: Callable[[], SyncPanel]) -> SyncPanel:
        # strategies evaluated on worker threads share one DayData
        with self._lock:
            if key not in self._panels:
                self._panels[key] = build()
            return self._panels[key]

    @property
    def sparse_panel(self) -> SyncPanel:
        return self._panel("sparse", lambda: Synchronizer.previous_tick(
            self.series, Synchronizer.fifteen_minute_grid(self.session)))

    @property
    def refresh_panel(self) -> SyncPanel:
        return self._panel("refresh", lambda: Synchronizer.refresh_time(self.series, 0))

    @property
    def open(self) -> np.ndarray:
        return np.array([s.log_prices[0] for s in self.series])

    @property
    def close(self) -> np.ndarray:
        return np.array([s.log_prices[-1] for s in self.series])


class MarketData:
    """Day-indexed market data with daily closes and cached per-day estimates."""

    def __init__(self, days: Sequence[DayData]):
        if not days:
            raise EmptyEvaluationWindow("no trading days")
        self.days = list(days)
        self.symbols = [s.symbol for s in self.days[0].series]
        for day in self.days:
            if [s.symbol for s in day.series] != self.symbols:
                raise InvalidConfig(f"{day.label}: symbol set differs from {self.days[0].label}")
        # p x (D + 1): column 0 is the first open, column d + 1 the close of day d
        self.close_prices = np.column_stack([self.days[0].open] + [d.close for d in self.days])
        # p x D close-to-close log-returns; column d is the return of day d
        self.daily_returns = np.diff(self.close_prices, axis=1)
        self._tscv: Dict[Tuple[int, int, int], np.ndarray] = {}
        self._tscv_lock = threading.Lock()

    @classmethod
    def from_directory(cls, path: Union[str, Path], rules: Optional[CleaningRules] = None,
                       pattern: str = "day_*.csv") -> "MarketData":
        """Read and clean every raw tick file matching pattern, in name order."""
        rules = rules or CleaningRules()
        files = sorted(Path(path).glob(pattern))
        if not files:
            raise InvalidConfig(f"no files matching {pattern} in {path}")
        days = []
        for file in files:
            cleaned = TickCleaner.clean_ticks(TickCleaner.read_tick_file(file), rules)
            days.append(DayData(file.stem, list(cleaned.values()), rules.session))
        logger.info("loaded %d trading days from %s", len(days), path)
        return cls(days)

    @classmethod
    def from_record(cls, record, session: Optional[Session] = None) -> "MarketData":
        """Days of a simulated TruePathRecord, without going through files."""
        session = session or Session()
        days = [DayData(f"day_{d:03d}", record.day_series(d, session), session)
                for d in range(int(round(record.horizon)))]
        return cls(days)

    def __len__(self) -> int:
        return len(self.days)

    @property
    def p(self) -> int:
        return len(self.symbols)

    def index_of(self, label: str) -> int:
        for k, day in enumerate(self.days):
            if day.label == label:
                return k
        raise InvalidConfig(f"unknown day {label!r}")

    def tscv_day(self, d: int, K: int, J: int) -> np.ndarray:
        key = (d, K, J)
        with self._tscv_lock:
            if key not in self._tscv:
                day = self.days[d]
                self._tscv[key] = CovarianceEstimators.tscv_pairwise(day.series, None, K, J).matrix
            return self._tscv[key]


class History:
    """
    Market data as seen from the open of one evaluation day.

    Every accessor records the latest day index it hands out in
    ``latest_used``; the backtester rejects weights whose computation
    touched the evaluation day or anything after it.
    """

    def __init__(self, data: MarketData, day: int):
        self._data = data
        self.day = day
        self.latest_used = -1

    @property
    def p(self) -> int:
        return self._data.p

    def span(self, start: int, stop: int) -> range:
        """Day indices [start, stop), recorded as consumed."""
        if start < 0 or stop > len(self._data) or start > stop:
            raise InvalidConfig(f"days [{start}, {stop}) are outside the {len(self._data)} loaded")
        if stop > start:
            self.latest_used = max(self.latest_used, stop - 1)
        return range(start, stop)

    def _last(self, k: int) -> range:
        if k > self.day:
            raise InvalidConfig(f"day {self.day} has only {self.day} prior days, {k} needed")
        return self.span(self.day - k, self.day)

    def days(self, k: int) -> List[DayData]:
        return [self._data.days[d] for d in self._last(k)]

    def daily_returns(self, k: int) -> np.ndarray:
        r = self._last(k)
        return self.returns_between(r.start, r.stop)

    def returns_between(self, start: int, stop: int) -> np.ndarray:
        """Close-to-close returns of days start .. stop - 1."""
        r = self.span(start, stop)
        return self._data.daily_returns[:, r.start:r.stop]

    def closes(self, k: int) -> np.ndarray:
        """The k + 1 close columns bracketing the last k days."""
        r = self._last(k)
        return self._data.close_prices[:, r.start:r.stop + 1]

    def tscv(self, k: int, K: int, J: int) -> List[np.ndarray]:
        """Per-day two-scale estimates of the last k days."""
        return [self._data.tscv_day(d, K, J) for d in self._last(k)]


@dataclass
class BacktestReport:
    """Per-day portfolio log-returns per strategy (NaN where a day failed)."""
    dates: List[str]
    returns: Dict[str, np.ndarray]
    failures: Dict[str, int] = field(default_factory=dict)

    @property
    def strategies(self) -> List[str]:
        return list(self.returns)

    def __len__(self) -> int:
        return len(self.dates)

    def coverage(self, name: str) -> float:
        r = self.returns[name]
        return float(np.mean(np.isfinite(r))) if r.size else 0.0

    def metrics(self, name: str) -> Tuple[float, float, float]:
        return Backtester.performance(self.returns[name])

    def slice(self, start: int, stop: int) -> "BacktestReport":
        return BacktestReport(self.dates[start:stop],
                              {k: v[start:stop].copy() for k, v in self.returns.items()},
                              {k: int(np.sum(~np.isfinite(v[start:stop]))) for k, v in self.returns.items()})


class Backtester:
    """Rolling daily-rebalance evaluation."""

    @staticmethod
    def performance(returns: np.ndarray) -> Tuple[float, float, float]:
        """
        (AV, SD, IR): mean x 252, sample standard deviation x sqrt(252)
        and their ratio. IR is NaN when SD is 0; failed days are ignored.
        """
        r = np.asarray(returns, dtype=float)
        r = r[np.isfinite(r)]
        if r.size == 0:
            return math.nan, math.nan, math.nan
        av = float(r.mean() * TRADING_DAYS)
        if r.size < 2:
            return av, math.nan, math.nan
        sd = 0.0 if np.ptp(r) == 0 else float(r.std(ddof=1) * math.sqrt(TRADING_DAYS))
        ir = av / sd if sd > 0 else math.nan
        return av, sd, ir

    @staticmethod
    def sqml_for(spec: StrategySpec, history: History, threads: Optional[int] = 1) -> SqmlEstimate:
        """
        SQML estimate from the J days before the history's day: eigenvectors
        from the first J1 (15-minute returns for SQrM, daily closes for
        SQrD), eigenvalues from the refresh-time panels of the last J - J1.
        """
        cfg = spec.sqml_config()
        days = history.days(cfg.J)
        hist_days, dense = days[:cfg.J1], days[cfg.J1:]
        if cfg.fifteen_min:
            hist = Synchronizer.concat_returns([d.sparse_panel for d in hist_days])
        else:
            closes = history.closes(cfg.J)[:, :cfg.J1 + 1]
            hist = SyncPanel(np.arange(closes.shape[1]), closes, SyncScheme.PREVIOUS_TICK)
        return ShrinkageQML.sqml_estimate(cfg, hist, [d.refresh_panel for d in dense], threads)

    @staticmethod
    def estimate_covariance(spec: StrategySpec, history: History) -> Tuple[np.ndarray, bool]:
        """
        Covariance input for the optimizer.

        Returns:
            (matrix, is_inverse): SQML yields its inverse directly
        """
        kind = spec.estimator
        if kind in (EstimatorKind.SQRM, EstimatorKind.SQRD):
            return Backtester.sqml_for(spec, history).sigma_inv_hat, True
        if kind is EstimatorKind.LS:
            R = history.daily_returns(spec.J_LS)
            S = CovarianceEstimators.sample_cov_daily(history.closes(spec.J_LS))
            return CovarianceEstimators.linear_shrinkage(S, R)[0].matrix, False
        if kind is EstimatorKind.SP:
            R = history.daily_returns(spec.J_SP)
            return R @ R.T / R.shape[1], False
        if kind is EstimatorKind.TS:
            total = sum(history.tscv(spec.J_TS, spec.tscv_K, spec.tscv_J))
            return SpectralTools.psd_project(total), False
        raise InvalidConfig(f"{spec.name}: estimator {kind.value} has no covariance")

    @staticmethod
    def weights_for_day(spec: StrategySpec, history: History) -> Weights:
        opt = spec.optimizer
        signal: Optional[MomentumSignal] = None
        if opt in (OptimizerKind.MWM, OptimizerKind.EW_TQ):
            signal = PortfolioBuilder.momentum_signal(
                history.daily_returns(spec.momentum_lookback), spec.momentum_lookback)
        if opt is OptimizerKind.EW:
            return PortfolioBuilder.equal_weights(history.p, spec.name)
        if opt is OptimizerKind.EW_TQ:
            return PortfolioBuilder.equal_weights_top_quintile(signal, spec.name)

        matrix, is_inverse = Backtester.estimate_covariance(spec, history)
        if opt is OptimizerKind.L1_GMV:
            cov = np.linalg.inv(matrix) if is_inverse else matrix
            return PortfolioBuilder.gmv_l1_weights(SpectralTools.psd_project(0.5 * (cov + cov.T)), spec.c, spec.name)
        inv = matrix if is_inverse else np.linalg.inv(matrix)
        if opt is OptimizerKind.MWM:
            return PortfolioBuilder.mwm_weights(inv, signal, spec.name)
        return PortfolioBuilder.gmv_weights(inv, spec.name)

    @staticmethod
    def _run_strategy(spec: StrategySpec, data: MarketData, eval_days: range) -> Tuple[np.ndarray, int]:
        out = np.full(len(eval_days), np.nan)
        failures = 0
        for k, d in enumerate(eval_days):
            try:
                history = History(data, d)
                w = Backtester.weights_for_day(spec, history)
                if history.latest_used >= d:
                    raise RuntimeError(f"{spec.name} used data of day {history.latest_used} on day {d}")
                out[k] = float(w.w @ data.daily_returns[:, d])
            except (IcvError, np.linalg.LinAlgError, ValueError) as e:
                failures += 1
                logger.warning("%s failed on %s: %s", spec.name, data.days[d].label, e)
        return out, failures

    @staticmethod
    def resolve_window(data: MarketData, eval_window) -> range:
        if eval_window is None:
            return range(0, len(data))
        start, stop = eval_window
        start = data.index_of(start) if isinstance(start, str) else int(start)
        stop = data.index_of(stop) + 1 if isinstance(stop, str) else int(stop)
        days = range(max(start, 0), min(stop, len(data)))
        if len(days) == 0:
            raise EmptyEvaluationWindow(f"evaluation window {eval_window} contains no days")
        return days

    @staticmethod
    def run_backtest(strategies: Sequence[StrategySpec], data: MarketData,
                     eval_window=None, threads: Optional[int] = 1) -> BacktestReport:
        """
        Evaluate every strategy on every day of the window. Weights for day
        d use only days before d; the realized return is w' times the
        close-to-close log-return vector of day d.

        Args:
            strategies: Strategies to evaluate
            data: Market data
            eval_window: (start, stop) day indices (stop exclusive) or day
                labels (stop inclusive); defaults to every day
            threads: Strategies evaluated in parallel

        Raises:
            EmptyEvaluationWindow: the window contains no days
            InvalidConfig: a strategy lacks the history its lookback needs
        """
        days = Backtester.resolve_window(data, eval_window)
        for spec in strategies:
            spec.validate()
            if spec.lookback() > days.start:
                raise InvalidConfig(f"{spec.name} needs {spec.lookback()} prior days, "
                                    f"window starts at day {days.start}")
        names = [s.name for s in strategies]
        if len(set(names)) != len(names):
            raise InvalidConfig("strategy names must be unique")

        results = map_ordered(lambda s: Backtester._run_strategy(s, data, days), strategies, threads)
        report = BacktestReport([data.days[d].label for d in days],
                                {s.name: r for s, (r, _) in zip(strategies, results)},
                                {s.name: f for s, (_, f) in zip(strategies, results)})
        for name in names:
            if report.failures[name]:
                logger.warning("%s coverage %.1f%%", name, 100 * report.coverage(name))
        return report

    @staticmethod
    def expand_grid(grid: Dict[str, Sequence]) -> List[Dict[str, object]]:
        keys = list(grid)
        return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]

    @staticmethod
    def rolling_windows(report: BacktestReport, window: int = ROLLING_WINDOW) -> Dict[str, np.ndarray]:
        """Per strategy, an (n - window + 1) x 2 array of (SD, IR) over windows moved one day at a time."""
        n = len(report)
        out = {}
        for name, r in report.returns.items():
            rows = [Backtester.performance(r[k:k + window])[1:] for k in range(max(0, n - window + 1))]
            out[name] = np.array(rows, dtype=float).reshape(-1, 2)
        return out

    @staticmethod
    def objective_value(report: BacktestReport, name: str, objective: Objective) -> float:
        if objective in (Objective.MIN_SD, Objective.MAX_IR):
            _, sd, ir = report.metrics(name)
            return sd if objective is Objective.MIN_SD else ir
        rolling = Backtester.rolling_windows(report)[name]
        column = rolling[:, 0] if objective is Objective.MIN_ROLLING_SD else rolling[:, 1]
        column = column[np.isfinite(column)]
        return float(column.mean()) if column.size else math.nan

    @staticmethod
    def grid_sweep(base: StrategySpec, grid: Dict[str, Sequence], objective: Objective,
                   data: MarketData, eval_window=None,
                   threads: Optional[int] = 1) -> Tuple[StrategySpec, pd.DataFrame]:
        """
        Evaluate base at every grid point.

        Returns:
            (best spec, table with one row per grid point: parameters, AV, SD,
            IR, objective)
        """
        points = Backtester.expand_grid(grid)
        specs = []
        for point in points:
            tag = ",".join(f"{k}={v}" for k, v in point.items())
            specs.append(replace(base, name=f"{base.name}[{tag}]", **point))
        report = Backtester.run_backtest(specs, data, eval_window, threads)

        rows, scores = [], []
        for spec, point in zip(specs, points):
            av, sd, ir = report.metrics(spec.name)
            score = Backtester.objective_value(report, spec.name, objective)
            rows.append({"strategy": spec.name, **point, "AV": av, "SD": sd, "IR": ir,
                         objective.value: score})
            scores.append(score)
        scores = np.array(scores, dtype=float)
        if not np.isfinite(scores).any():
            raise EmptyEvaluationWindow(f"no grid point of {base.name} produced a finite {objective.value}")
        sign = 1.0 if objective in (Objective.MIN_SD, Objective.MIN_ROLLING_SD) else -1.0
        best = int(np.nanargmin(sign * scores))
        logger.info("%s best grid point %s (%s = %.6g)", base.name, points[best], objective.value, scores[best])
        return specs[best], pd.DataFrame(rows)

    @staticmethod
    def subperiod_split(report: BacktestReport, split) -> Tuple[BacktestReport, BacktestReport]:
        """
        Split at a day index or day label (the label starts the second part).

        Raises:
            EmptyEvaluationWindow: either part would be empty
        """
        k = report.dates.index(split) if isinstance(split, str) else int(split)
        if k <= 0 or k >= len(report):
            raise EmptyEvaluationWindow(f"split at {split} leaves an empty sub-period")
        return report.slice(0, k), report.slice(k, len(report))

    @staticmethod
    def time_span_sweep(ls_base: StrategySpec, sqrd_base: StrategySpec, data: MarketData,
                        eval_window=None, spans: Iterable[int] = range(50, 251, 10),
                        threads: Optional[int] = 1) -> pd.DataFrame:
        """SD of LS over J_LS and of SQrD over J1 (J - J1 = 1) for each span."""
        spans = list(spans)
        specs = []
        for span in spans:
            specs.append(replace(ls_base, name=f"LS[{span}]", J_LS=span))
            specs.append(replace(sqrd_base, name=f"SQrD[{span}]", J1=span, dense_days=1))
        report = Backtester.run_backtest(specs, data, eval_window, threads)
        return pd.DataFrame({
            "span": spans,
            "SD_LS": [report.metrics(f"LS[{s}]")[1] for s in spans],
            "SD_SQrD": [report.metrics(f"SQrD[{s}]")[1] for s in spans],
        })

    @staticmethod
    def summary_table(report: BacktestReport) -> pd.DataFrame:
        """One row per strategy: AV, SD, IR, coverage and best-SD / best-IR markers."""
        rows = []
        for name in report.strategies:
            av, sd, ir = report.metrics(name)
            rows.append({"strategy": name, "AV": av, "SD": sd, "IR": ir,
                         "coverage": report.coverage(name)})
        table = pd.DataFrame(rows, columns=["strategy", "AV", "SD", "IR", "coverage"])
        table["best"] = ""
        if table["SD"].notna().any():
            table.loc[table["SD"].idxmin(), "best"] = "minSD"
        if table["IR"].notna().any():
            k = table["IR"].idxmax()
            table.loc[k, "best"] = (table.loc[k, "best"] + " maxIR").strip()
        return table
