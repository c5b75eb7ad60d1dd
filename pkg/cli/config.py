"""
Run configuration for the ICV Shrink command line.
One JSON file (--config) with a section per subcommand, overlaid by
command-line flags; flags win.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from core.exceptions import InvalidConfig

logger = logging.getLogger(__name__)


@dataclass
class SimulateSection:
    p: int = 30
    days: int = 3
    fine_steps_per_day: int = 23_400
    tick_intensity: float = 2_000.0   # expected ticks per asset per day
    noise_var: float = 1e-7
    gamma_values: Tuple[float, ...] = (0.015, 0.025)
    gamma_pieces_per_day: int = 4
    spectrum: Tuple[float, ...] = (1.0, 3.0)  # population levels, equally weighted
    c0: float = 1000.0


@dataclass
class IngestSection:
    allowed_conditions: Tuple[str, ...] = ("E", "F")
    strict: bool = True


@dataclass
class SyncSection:
    scheme: str = "refresh_time"
    step_seconds: int = 900


@dataclass
class EstimateSection:
    kind: str = "tva"
    day: Optional[str] = None        # day label; defaults to the last day
    variant: str = "SQrM"
    J: int = 3
    J1: int = 2
    tscv_K: int = 10
    tscv_J: int = 1


@dataclass
class BacktestSection:
    # sized for the default three simulated days: two days of history, one evaluated
    strategies: List[Dict[str, Any]] = field(default_factory=lambda: [
        {"name": "EW", "estimator": "EW"},
        {"name": "SQrM", "estimator": "SQrM", "J1": 1, "dense_days": 1},
        {"name": "LS", "estimator": "LS", "J_LS": 2},
        {"name": "TS", "estimator": "TS", "J_TS": 1},
    ])
    eval_start: Optional[str] = None  # day label, or None for the first day every strategy can trade
    eval_end: Optional[str] = None    # inclusive day label
    split: Optional[str] = None
    sweep: Optional[str] = None       # strategy name to sweep over its published grid
    objective: str = "minSD"
    strict_grids: bool = False


@dataclass
class RmtCheckSection:
    y: float = 0.5
    spectrum_file: Optional[str] = None
    quick: bool = False
    simulations: bool = True


@dataclass
class RunConfig:
    command: str = ""
    input: Optional[str] = None
    output: str = "out"
    seed: int = 0
    threads: Optional[int] = None
    zip: bool = False
    simulate: SimulateSection = field(default_factory=SimulateSection)
    ingest: IngestSection = field(default_factory=IngestSection)
    sync: SyncSection = field(default_factory=SyncSection)
    estimate: EstimateSection = field(default_factory=EstimateSection)
    backtest: BacktestSection = field(default_factory=BacktestSection)
    rmt_check: RmtCheckSection = field(default_factory=RmtCheckSection)

    SECTIONS = ("simulate", "ingest", "sync", "estimate", "backtest", "rmt_check")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        config = cls()
        for key, value in data.items():
            key = key.replace("-", "_")
            if key in cls.SECTIONS:
                if not isinstance(value, dict):
                    raise InvalidConfig(f"section {key!r} must be an object")
                _update(getattr(config, key), value, key)
            elif key in {f.name for f in fields(cls)}:
                setattr(config, key, value)
            else:
                raise InvalidConfig(f"unknown configuration key {key!r}")
        return config

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        if path is None:
            return cls()
        try:
            with open(path) as f:
                data = json.load(f)
        except FileNotFoundError:
            raise InvalidConfig(f"config file {path} does not exist") from None
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"config file {path}: {e}") from None
        if not isinstance(data, dict):
            raise InvalidConfig("config file must hold a JSON object")
        return cls.from_dict(data)

    def apply_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """
        Overlay flag values. Keys are either top-level field names or
        "section.field"; None means the flag was not given.
        """
        for key, value in overrides.items():
            if value is None:
                continue
            section, _, name = key.rpartition(".")
            target = getattr(self, section) if section else self
            if not hasattr(target, name):
                raise InvalidConfig(f"unknown configuration key {key!r}")
            setattr(target, name, _coerce(getattr(target, name), value))
        return self

    def validate(self) -> "RunConfig":
        """
        Range and path checks for the selected subcommand.

        Raises:
            InvalidConfig: a value is out of range or an input path is missing
        """
        if self.threads is not None and self.threads < 1:
            raise InvalidConfig("--threads must be >= 1")
        if self.command in ("ingest", "sync", "estimate", "backtest"):
            if not self.input:
                raise InvalidConfig(f"{self.command} needs an input path")
            if not Path(self.input).exists():
                raise InvalidConfig(f"input path {self.input} does not exist")
        sim = self.simulate
        if self.command == "simulate":
            if sim.p < 1 or sim.days < 1 or sim.fine_steps_per_day < 1:
                raise InvalidConfig("simulate needs p, days and fine_steps_per_day >= 1")
            if sim.tick_intensity <= 0 or sim.noise_var < 0:
                raise InvalidConfig("tick intensity must be positive and noise variance non-negative")
            if not sim.gamma_values or sim.gamma_pieces_per_day < 1 or min(sim.spectrum, default=0) <= 0:
                raise InvalidConfig("gamma values, pieces and spectrum levels must be positive")
        if self.command == "sync" and self.sync.scheme not in ("refresh_time", "previous_tick"):
            raise InvalidConfig(f"unknown sync scheme {self.sync.scheme!r}")
        if self.command == "estimate" and self.estimate.kind not in ESTIMATE_KINDS:
            raise InvalidConfig(f"unknown estimator kind {self.estimate.kind!r}; "
                                f"choose from {', '.join(ESTIMATE_KINDS)}")
        if self.command == "rmt-check":
            if self.rmt_check.y <= 0:
                raise InvalidConfig("y must be positive")
            if self.rmt_check.spectrum_file and not Path(self.rmt_check.spectrum_file).exists():
                raise InvalidConfig(f"spectrum file {self.rmt_check.spectrum_file} does not exist")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


ESTIMATE_KINDS = ("rcv", "tva", "sample", "ls", "tscv", "sqml")


def _update(section, values: Dict[str, Any], label: str) -> None:
    known = {f.name for f in fields(section)}
    for key, value in values.items():
        key = key.replace("-", "_")
        if key not in known:
            raise InvalidConfig(f"unknown key {key!r} in section {label!r}")
        setattr(section, key, _coerce(getattr(section, key), value))


def _coerce(current, value):
    if isinstance(current, tuple) and isinstance(value, (list, tuple)):
        return tuple(value)
    if is_dataclass(current):
        raise InvalidConfig("cannot override a whole section from a flag")
    return value
