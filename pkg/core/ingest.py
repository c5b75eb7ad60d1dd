"""
Tick ingestion for ICV Shrink.
Parses raw trade files, applies the five cleaning rules and
produces one TickSeries per symbol.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .exceptions import InvalidConfig, NoDataForSymbol, ParseError

logger = logging.getLogger(__name__)

NS_PER_SECOND = 1_000_000_000
TICK_COLUMNS = ["symbol", "timestamp", "price", "cond", "corr"]


@dataclass(frozen=True)
class RawTick:
    """One row of a raw trade file (may be dirty)."""
    symbol: str
    timestamp: int  # ns since midnight
    price: float
    cond: str = ""
    corr: int = 0


@dataclass(frozen=True)
class Session:
    """Trading session bounds in nanoseconds since midnight."""
    open_ns: int = 34_200 * NS_PER_SECOND   # 09:30
    close_ns: int = 57_600 * NS_PER_SECOND  # 16:00

    def __post_init__(self):
        if self.close_ns <= self.open_ns:
            raise InvalidConfig("session close must be after session open")

    @property
    def length_ns(self) -> int:
        return self.close_ns - self.open_ns

    def normalized(self) -> Tuple[int, int]:
        """Session bounds in ns since session open."""
        return (0, self.length_ns)


@dataclass
class TickSeries:
    """Cleaned tick stream of one asset; times are ns since session open."""
    symbol: str
    times: np.ndarray
    log_prices: np.ndarray
    session: Tuple[int, int] = field(default_factory=lambda: Session().normalized())

    def __post_init__(self):
        self.times = np.asarray(self.times)
        self.log_prices = np.asarray(self.log_prices, dtype=float)
        if self.times.shape != self.log_prices.shape or self.times.ndim != 1:
            raise ValueError(f"{self.symbol}: times and log_prices must be 1-D and equal length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError(f"{self.symbol}: tick times must be strictly increasing")
        if self.times.size and (self.times[0] < self.session[0] or self.times[-1] > self.session[1]):
            raise ValueError(f"{self.symbol}: tick times outside session")

    def __len__(self) -> int:
        return int(self.times.size)

    def window(self, start, end) -> "TickSeries":
        """Ticks with start <= time <= end."""
        lo = np.searchsorted(self.times, start, side="left")
        hi = np.searchsorted(self.times, end, side="right")
        return TickSeries(self.symbol, self.times[lo:hi], self.log_prices[lo:hi], self.session)


@dataclass(frozen=True)
class CleaningRules:
    """Parameters of the cleaning pass."""
    session: Session = field(default_factory=Session)
    allowed_conditions: Tuple[str, ...] = ("E", "F")
    strict: bool = True  # raise NoDataForSymbol instead of dropping the symbol


class TickCleaner:
    """Reads raw tick files and applies the cleaning rules."""

    @staticmethod
    def parse_timestamp(text: str) -> int:
        """
        Parse a raw timestamp into integer nanoseconds since midnight.

        Accepts clock times ``HH:MM:SS`` with an optional fraction of up to
        nine digits (shorter fractions are padded with zeros), or a plain
        integer already expressed in nanoseconds since midnight.
        """
        text = text.strip()
        if not text:
            raise ValueError("empty timestamp")
        if ":" not in text:
            return int(text)
        clock, _, fraction = text.partition(".")
        parts = clock.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad clock time {text!r}")
        hours, minutes, seconds = (int(x) for x in parts)
        if not (0 <= minutes < 60 and 0 <= seconds < 61):
            raise ValueError(f"bad clock time {text!r}")
        if fraction and (not fraction.isdigit() or len(fraction) > 9):
            raise ValueError(f"bad fractional seconds {text!r}")
        frac_ns = int(fraction.ljust(9, "0")) if fraction else 0
        return (hours * 3600 + minutes * 60 + seconds) * NS_PER_SECOND + frac_ns

    @staticmethod
    def format_timestamp(ns: int) -> str:
        """Inverse of parse_timestamp for clock-formatted output."""
        seconds, frac = divmod(int(ns), NS_PER_SECOND)
        hours, rem = divmod(seconds, 3600)
        minutes, secs = divmod(rem, 60)
        return f"{hours:02d}:{minutes:02d}:{secs:02d}.{frac:09d}"

    @staticmethod
    def read_tick_file(path: Union[str, Path], delimiter: str = ",") -> pd.DataFrame:
        """
        Read a raw tick file into a typed frame.

        Args:
            path: Delimited text file with header symbol,timestamp,price,cond,corr
            delimiter: Column delimiter

        Returns:
            DataFrame with columns symbol (str), timestamp (int64 ns since
            midnight), price (float), cond (str), corr (int64) and a
            ``line`` column holding the 1-based source line number

        Raises:
            ParseError: header missing or a row is malformed
        """
        try:
            frame = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False)
        except pd.errors.ParserError as e:
            found = re.search(r"line (\d+)", str(e))
            raise ParseError(int(found.group(1)) if found else 0, f"wrong number of fields: {e}") from None
        header = [c.strip() for c in frame.columns]
        if header != TICK_COLUMNS:
            raise ParseError(1, f"expected header {','.join(TICK_COLUMNS)}, got {','.join(header)}")
        frame.columns = TICK_COLUMNS
        lines = np.arange(len(frame), dtype=np.int64) + 2
        short = frame.isna().any(axis=1).to_numpy()
        if short.any():
            raise ParseError(int(lines[np.flatnonzero(short)[0]]), f"expected {len(TICK_COLUMNS)} fields")

        stamps = np.empty(len(frame), dtype=np.int64)
        for k, (text, line) in enumerate(zip(frame["timestamp"], lines)):
            try:
                stamps[k] = TickCleaner.parse_timestamp(text)
            except ValueError as e:
                raise ParseError(int(line), str(e)) from None

        prices = pd.to_numeric(frame["price"].str.strip(), errors="coerce")
        corr = pd.to_numeric(frame["corr"].str.strip().replace("", "0"), errors="coerce")
        symbols = frame["symbol"].str.strip()
        for name, bad in (("price", prices.isna()), ("corr", corr.isna() | (corr % 1 != 0)),
                          ("symbol", symbols == "")):
            if bad.any():
                line = int(lines[np.flatnonzero(bad.to_numpy())[0]])
                raise ParseError(line, f"malformed {name} field")

        return pd.DataFrame({
            "symbol": symbols,
            "timestamp": stamps,
            "price": prices.astype(float),
            "cond": frame["cond"].str.strip(),
            "corr": corr.astype(np.int64),
            "line": lines,
        })

    @staticmethod
    def frame_from_ticks(raw: Iterable[RawTick]) -> pd.DataFrame:
        rows = [(t.symbol, int(t.timestamp), float(t.price), t.cond or "", int(t.corr)) for t in raw]
        return pd.DataFrame(rows, columns=TICK_COLUMNS).astype(
            {"symbol": str, "timestamp": np.int64, "price": float, "cond": str, "corr": np.int64})

    @staticmethod
    def clean_ticks(raw: Union[Sequence[RawTick], pd.DataFrame],
                    rules: Optional[CleaningRules] = None) -> Dict[str, TickSeries]:
        """
        Apply the five cleaning rules and build per-symbol series.

        Rules: (1) price > 0; (2) correction indicator >= 0; (3) condition
        empty or exactly "E"/"F"; (4) timestamp inside the session,
        bounds included; (5) ticks sharing a timestamp collapse to their
        median price (mean of the two middle prices for even groups).

        Args:
            raw: RawTick sequence or a frame from read_tick_file
            rules: Cleaning parameters (defaults to the 9:30-16:00 session)

        Returns:
            Mapping symbol -> TickSeries, symbols in sorted order

        Raises:
            NoDataForSymbol: a symbol loses every tick (strict mode)
        """
        rules = rules or CleaningRules()
        frame = raw if isinstance(raw, pd.DataFrame) else TickCleaner.frame_from_ticks(raw)
        session = rules.session
        symbols = sorted(frame["symbol"].unique())

        keep = (
            (frame["price"] > 0)
            & (frame["corr"] >= 0)
            & ((frame["cond"] == "") | frame["cond"].isin(rules.allowed_conditions))
            & (frame["timestamp"] >= session.open_ns)
            & (frame["timestamp"] <= session.close_ns)
        )
        kept = frame.loc[keep, ["symbol", "timestamp", "price"]]
        logger.debug("cleaning kept %d of %d ticks", len(kept), len(frame))

        # pandas median averages the two middle values of even groups
        collapsed = kept.groupby(["symbol", "timestamp"], sort=True)["price"].median()

        result: Dict[str, TickSeries] = {}
        for symbol in symbols:
            if symbol not in collapsed.index.get_level_values(0):
                if rules.strict:
                    raise NoDataForSymbol(symbol)
                logger.warning("symbol %s has no ticks after cleaning, dropped", symbol)
                continue
            group = collapsed.xs(symbol, level="symbol")
            times = group.index.to_numpy(dtype=np.int64) - session.open_ns
            result[symbol] = TickSeries(symbol, times, np.log(group.to_numpy(dtype=float)),
                                        session.normalized())
        return result

    @staticmethod
    def to_raw_ticks(series: TickSeries, session: Optional[Session] = None) -> List[RawTick]:
        """Re-serialize a cleaned series as raw ticks that pass every rule."""
        session = session or Session()
        return [RawTick(series.symbol, int(t) + session.open_ns, float(np.exp(v)), "", 0)
                for t, v in zip(series.times, series.log_prices)]
