"""
Result export for ICV Shrink.
Handles delimited-text output of tick caches, panels, covariance
estimates, SQML estimates, weights, backtest tables and limiting
spectral tables, plus the readers the CLI needs to chain subcommands.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from .backtest import Backtester, BacktestReport
from .estimators import CovEstimate, CovKind
from .exceptions import InvalidConfig, ParseError
from .ingest import Session, TickSeries
from .portfolio import Weights
from .rmt_limits import PopulationSpectrum
from .sqml import SqmlEstimate
from .sync import SyncPanel, SyncScheme

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
PathLike = Union[str, Path]


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_matrix(handle, matrix: np.ndarray) -> None:
    np.savetxt(handle, np.atleast_2d(matrix), delimiter=",", fmt=FLOAT_FORMAT)


class ResultExporter:
    """Writes and reads every serialisable result type."""

    @staticmethod
    def export_tick_cache(series: TickSeries, output_path: PathLike) -> bool:
        """
        Write one cleaned series as timestamp_ns,log_price rows.

        Returns:
            True if successful
        """
        try:
            pd.DataFrame({"timestamp_ns": series.times, "log_price": series.log_prices}).to_csv(
                _prepare(output_path), index=False, float_format=FLOAT_FORMAT)
            return True
        except OSError as e:
            logger.error("Error exporting tick cache for %s: %s", series.symbol, e)
            return False

    @staticmethod
    def export_tick_caches(series: Dict[str, TickSeries], output_dir: PathLike) -> bool:
        """One <symbol>.csv per series."""
        ok = True
        for symbol, s in series.items():
            ok &= ResultExporter.export_tick_cache(s, Path(output_dir) / f"{symbol}.csv")
        return ok

    @staticmethod
    def read_tick_cache(path: PathLike, session: Optional[Session] = None) -> TickSeries:
        path = Path(path)
        frame = pd.read_csv(path)
        if list(frame.columns) != ["timestamp_ns", "log_price"]:
            raise ParseError(1, f"{path.name}: expected header timestamp_ns,log_price")
        session = session or Session()
        return TickSeries(path.stem, frame["timestamp_ns"].to_numpy(dtype=np.int64),
                          frame["log_price"].to_numpy(dtype=float), session.normalized())

    @staticmethod
    def read_tick_caches(cache_dir: PathLike, session: Optional[Session] = None) -> List[TickSeries]:
        """Every cache in a directory, sorted by symbol."""
        files = sorted(Path(cache_dir).glob("*.csv"))
        if not files:
            raise InvalidConfig(f"no tick caches in {cache_dir}")
        return [ResultExporter.read_tick_cache(f, session) for f in files]

    @staticmethod
    def export_panel(panel: SyncPanel, output_path: PathLike) -> bool:
        """
        Write a panel with one column per grid point: the first row holds
        the grid, each following row one asset's log-prices.
        """
        try:
            columns = [str(g) for g in panel.grid]
            frame = pd.DataFrame(panel.log_prices, columns=columns)
            frame.insert(0, "symbol", panel.symbols)
            path = _prepare(output_path)
            with open(path, "w") as f:
                f.write(f"# scheme={panel.scheme.value}\n")
                frame.to_csv(f, index=False, float_format=FLOAT_FORMAT)
            return True
        except OSError as e:
            logger.error("Error exporting panel: %s", e)
            return False

    @staticmethod
    def read_panel(path: PathLike) -> SyncPanel:
        path = Path(path)
        with open(path) as f:
            first = f.readline().strip()
        if not first.startswith("# scheme="):
            raise ParseError(1, f"{path.name}: missing scheme line")
        scheme = SyncScheme(first.partition("=")[2])
        frame = pd.read_csv(path, skiprows=1)
        grid = np.array([int(float(c)) if float(c).is_integer() else float(c) for c in frame.columns[1:]])
        return SyncPanel(grid, frame.iloc[:, 1:].to_numpy(dtype=float), scheme,
                         frame["symbol"].astype(str).tolist())

    @staticmethod
    def export_cov_estimate(estimate: CovEstimate, output_path: PathLike) -> bool:
        """Header line p,kind,start,end,n_obs followed by the p x p matrix."""
        try:
            with open(_prepare(output_path), "w") as f:
                start, end = estimate.window
                f.write("p,kind,start,end,n_obs\n")
                f.write(f"{estimate.p},{estimate.kind.value},{start},{end},{estimate.n_obs}\n")
                _write_matrix(f, estimate.matrix)
            return True
        except OSError as e:
            logger.error("Error exporting %s estimate: %s", estimate.kind.value, e)
            return False

    @staticmethod
    def read_cov_estimate(path: PathLike) -> CovEstimate:
        with open(path) as f:
            header = f.readline().strip()
            meta = f.readline().strip().split(",")
        if header != "p,kind,start,end,n_obs" or len(meta) != 5:
            raise ParseError(1, f"{Path(path).name}: not a covariance estimate file")
        matrix = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=2))
        if matrix.shape != (int(meta[0]), int(meta[0])):
            raise ParseError(3, f"expected a {meta[0]} x {meta[0]} matrix, got {matrix.shape}")
        return CovEstimate(matrix, CovKind(meta[1]), (float(meta[2]), float(meta[3])), int(meta[4]))

    @staticmethod
    def export_sqml_estimate(estimate: SqmlEstimate, output_dir: PathLike) -> bool:
        """basis.csv (eigenvectors as columns), v_hat.csv and the implied covariance."""
        try:
            out = Path(output_dir)
            out.mkdir(parents=True, exist_ok=True)
            with open(out / "basis.csv", "w") as f:
                _write_matrix(f, estimate.basis)
            pd.DataFrame({"direction": np.arange(estimate.p), "v_hat": estimate.v_hat}).to_csv(
                out / "v_hat.csv", index=False, float_format=FLOAT_FORMAT)
            if estimate.nonconverged:
                pd.DataFrame(estimate.nonconverged, columns=["day", "direction"]).to_csv(
                    out / "nonconverged.csv", index=False)
            return ResultExporter.export_cov_estimate(
                CovEstimate(estimate.sigma_hat, CovKind.SQML), out / "sigma_hat.csv")
        except OSError as e:
            logger.error("Error exporting SQML estimate: %s", e)
            return False

    @staticmethod
    def export_weights(weights: Weights, output_path: PathLike, symbols: Optional[List[str]] = None) -> bool:
        try:
            path = _prepare(output_path)
            with open(path, "w") as f:
                f.write(f"# strategy={weights.strategy} date={weights.date or ''} "
                        f"gross={weights.gross_exposure:.17g}\n")
                pd.DataFrame({"symbol": symbols or [f"asset{i}" for i in range(weights.p)],
                              "weight": weights.w}).to_csv(f, index=False, float_format=FLOAT_FORMAT)
            return True
        except OSError as e:
            logger.error("Error exporting weights: %s", e)
            return False

    @staticmethod
    def export_report(report: BacktestReport, output_dir: PathLike) -> bool:
        """
        Write the daily return series, the summary table and the rolling
        42-day (SD, IR) series of every strategy.
        """
        try:
            out = Path(output_dir)
            out.mkdir(parents=True, exist_ok=True)
            daily = pd.DataFrame(report.returns)
            daily.insert(0, "date", report.dates)
            daily.to_csv(out / "daily_returns.csv", index=False, float_format=FLOAT_FORMAT)
            Backtester.summary_table(report).to_csv(out / "summary.csv", index=False,
                                                    float_format=FLOAT_FORMAT)
            rolling = Backtester.rolling_windows(report)
            frames = []
            for name, rows in rolling.items():
                frames.append(pd.DataFrame({"strategy": name, "window": np.arange(len(rows)),
                                            "SD": rows[:, 0], "IR": rows[:, 1]}))
            if frames:
                pd.concat(frames, ignore_index=True).to_csv(out / "rolling.csv", index=False,
                                                            float_format=FLOAT_FORMAT)
            return True
        except OSError as e:
            logger.error("Error exporting backtest report: %s", e)
            return False

    @staticmethod
    def export_table(table: pd.DataFrame, output_path: PathLike) -> bool:
        """Any result table (grid sweeps, time-span sweeps)."""
        try:
            table.to_csv(_prepare(output_path), index=False, float_format=FLOAT_FORMAT)
            return True
        except OSError as e:
            logger.error("Error exporting table: %s", e)
            return False

    @staticmethod
    def export_rmt_tables(rows: np.ndarray, output_path: PathLike) -> bool:
        """Columns x, F, Psi, delta, g."""
        frame = pd.DataFrame(np.asarray(rows), columns=["x", "F", "Psi", "delta", "g"])
        return ResultExporter.export_table(frame, output_path)

    @staticmethod
    def read_spectrum(path: PathLike) -> PopulationSpectrum:
        """
        Population spectrum file: one eigenvalue per line, or
        value,weight rows (header optional).
        """
        frame = pd.read_csv(path, header=None, comment="#")
        if frame.shape[0] and not np.issubdtype(frame.dtypes.iloc[0], np.number):
            frame = pd.read_csv(path, comment="#")
        values = frame.iloc[:, 0].to_numpy(dtype=float)
        weights = frame.iloc[:, 1].to_numpy(dtype=float) if frame.shape[1] > 1 else None
        return PopulationSpectrum.from_atoms(values, weights)

    @staticmethod
    def read_matrix(path: PathLike) -> np.ndarray:
        return np.atleast_2d(np.loadtxt(path, delimiter=","))

    @staticmethod
    def export_matrix(matrix: np.ndarray, output_path: PathLike) -> bool:
        try:
            with open(_prepare(output_path), "w") as f:
                _write_matrix(f, matrix)
            return True
        except OSError as e:
            logger.error("Error exporting matrix: %s", e)
            return False

    @staticmethod
    def export_closes(closes: np.ndarray, symbols: List[str], output_path: PathLike) -> bool:
        """Daily close log-prices, one row per symbol, column 0 the first open."""
        frame = pd.DataFrame(closes, columns=[f"c{k}" for k in range(closes.shape[1])])
        frame.insert(0, "symbol", symbols)
        return ResultExporter.export_table(frame, output_path)
