"""
Command-line front-end for ICV Shrink.
Subcommands: simulate | ingest | sync | estimate | backtest | rmt-check.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from core.backtest import (PUBLISHED_GRIDS, Backtester, EstimatorKind, History, MarketData, Objective,
                           OptimizerKind, StrategySpec)
from core.estimators import CovarianceEstimators, CovEstimate
from core.exceptions import EmptyEvaluationWindow, IcvError, InvalidConfig, UnitRatioExcluded
from core.export import ResultExporter
from core.ingest import NS_PER_SECOND, CleaningRules, Session, TickCleaner
from core.parallel import default_threads
from core.rmt_audit import IssueSeverity, RmtAuditor
from core.rmt_limits import PopulationSpectrum, RandomMatrixLimits
from core.simulate import ClassCModel, GammaPath, PathSimulator
from core.sync import Synchronizer
from utils.archive import RunArchive

from .config import RunConfig

logger = logging.getLogger("icv_shrink")

DEFAULT_SPECTRUM = PopulationSpectrum((1.0, 3.0), (0.5, 0.5))


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("-o", "--output", dest="output", help="output directory")
    common.add_argument("--seed", dest="seed", type=int)
    common.add_argument("--threads", dest="threads", type=int,
                        help=f"worker threads (default: {default_threads()})")
    common.add_argument("--zip", dest="zip", action="store_const", const=True,
                        help="also package the run directory as a ZIP file")
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="icv_shrink",
                                     description="Integrated covariance estimation and portfolio backtests "
                                                 "from high-frequency prices.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[common], help="synthetic Class-C tick data")
    sim.add_argument("--p", dest="simulate.p", type=int)
    sim.add_argument("--days", dest="simulate.days", type=int)
    sim.add_argument("--fine-steps", dest="simulate.fine_steps_per_day", type=int)
    sim.add_argument("--tick-intensity", dest="simulate.tick_intensity", type=float)
    sim.add_argument("--noise-var", dest="simulate.noise_var", type=float)

    ing = sub.add_parser("ingest", parents=[common], help="clean a raw tick file into per-symbol caches")
    ing.add_argument("input", nargs="?")
    ing.add_argument("--allow-cond", dest="ingest.allowed_conditions", nargs="*")
    ing.add_argument("--lenient", dest="ingest.strict", action="store_const", const=False,
                     help="drop symbols with no clean ticks instead of failing")

    syn = sub.add_parser("sync", parents=[common], help="synchronize tick caches into a panel")
    syn.add_argument("input", nargs="?")
    syn.add_argument("--scheme", dest="sync.scheme", choices=["refresh_time", "previous_tick"])
    syn.add_argument("--step-seconds", dest="sync.step_seconds", type=int)

    est = sub.add_parser("estimate", parents=[common], help="covariance estimate from a directory of tick files")
    est.add_argument("input", nargs="?")
    est.add_argument("--kind", dest="estimate.kind")
    est.add_argument("--day", dest="estimate.day")
    est.add_argument("--variant", dest="estimate.variant", choices=["SQrM", "SQrD"])
    est.add_argument("--J", dest="estimate.J", type=int)
    est.add_argument("--J1", dest="estimate.J1", type=int)

    bt = sub.add_parser("backtest", parents=[common], help="daily-rebalanced out-of-sample backtest")
    bt.add_argument("input", nargs="?")
    bt.add_argument("--eval-start", dest="backtest.eval_start")
    bt.add_argument("--eval-end", dest="backtest.eval_end")
    bt.add_argument("--split", dest="backtest.split")
    bt.add_argument("--sweep", dest="backtest.sweep")
    bt.add_argument("--objective", dest="backtest.objective", choices=[o.value for o in Objective])

    rmt = sub.add_parser("rmt-check", parents=[common], help="limiting spectral tables and audit")
    rmt.add_argument("--y", dest="rmt_check.y", type=float)
    rmt.add_argument("--spectrum", dest="rmt_check.spectrum_file")
    rmt.add_argument("--quick", dest="rmt_check.quick", action="store_const", const=True)
    rmt.add_argument("--no-simulations", dest="rmt_check.simulations", action="store_const", const=False)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    skip = {"command", "config", "verbose", "quiet"}
    return {key: value for key, value in vars(args).items() if key not in skip}


def _finish(cfg: RunConfig, run_dir: Path, outputs: List[Path]) -> None:
    RunArchive.write_manifest(run_dir, cfg.command, cfg.to_dict(), cfg.seed,
                              {"outputs": sorted(str(p.relative_to(run_dir)) for p in outputs)})
    if cfg.zip:
        RunArchive.create_zip_archive(str(run_dir), f"{run_dir}.zip")


def _rules(cfg: RunConfig) -> CleaningRules:
    return CleaningRules(allowed_conditions=tuple(cfg.ingest.allowed_conditions), strict=cfg.ingest.strict)


def cmd_simulate(cfg: RunConfig) -> int:
    """Tick files for every simulated day, plus the true ICVs and closes."""
    sim = cfg.simulate
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    levels = np.resize(np.asarray(sim.spectrum, dtype=float), sim.p)
    model = ClassCModel(ClassCModel.lambda_from_spectrum(levels, rng),
                        GammaPath.alternating(sim.days, sim.days * sim.gamma_pieces_per_day, sim.gamma_values),
                        noise_cov=sim.noise_var * np.eye(sim.p),
                        tick_intensity=np.full(sim.p, sim.tick_intensity),
                        seed=cfg.seed, c0=sim.c0)
    record = PathSimulator.simulate_paths(model, sim.fine_steps_per_day * sim.days, sim.days, rng,
                                          anchor_times=np.arange(sim.days, dtype=float))

    run_dir = RunArchive.create_run_directory(cfg.output, cfg.command, ("ticks", "truth"))
    outputs = PathSimulator.write_tick_files(record, run_dir / "ticks")
    symbols = [s.symbol for s in record.day_series(0)]
    for d in range(sim.days):
        path = run_dir / "truth" / f"icv_day_{d:03d}.csv"
        ResultExporter.export_matrix(record.true_icv(d, d + 1), path)
        outputs.append(path)
    outputs.append(run_dir / "truth" / "closes.csv")
    ResultExporter.export_closes(PathSimulator.daily_closes(record), symbols, outputs[-1])
    outputs.append(run_dir / "truth" / "covariance_shape.csv")
    ResultExporter.export_matrix(model.covariance_shape, outputs[-1])
    _finish(cfg, run_dir, outputs)
    print(f"Simulated {sim.p} assets over {sim.days} days: {sim.days} tick files in {run_dir / 'ticks'}")
    return 0


def cmd_ingest(cfg: RunConfig) -> int:
    cleaned = TickCleaner.clean_ticks(TickCleaner.read_tick_file(cfg.input), _rules(cfg))
    run_dir = RunArchive.create_run_directory(cfg.output, cfg.command, ("cache",))
    if not ResultExporter.export_tick_caches(cleaned, run_dir / "cache"):
        raise IcvError(f"could not write tick caches to {run_dir / 'cache'}")
    _finish(cfg, run_dir, [run_dir / "cache" / f"{s}.csv" for s in cleaned])
    for symbol, series in cleaned.items():
        print(f"{symbol}: {len(series)} ticks")
    return 0


def cmd_sync(cfg: RunConfig) -> int:
    series = ResultExporter.read_tick_caches(cfg.input)
    if cfg.sync.scheme == "refresh_time":
        panel = Synchronizer.refresh_time(series)
        n_refresh, mean_ticks, expected = Synchronizer.refresh_retention(series)
        print(f"Refresh times: {n_refresh} (mean ticks per asset {mean_ticks:.1f}, "
              f"equal-intensity expectation {expected:.1f})")
    else:
        grid = Synchronizer.fifteen_minute_grid(Session(), cfg.sync.step_seconds * NS_PER_SECOND)
        panel = Synchronizer.previous_tick(series, grid)
    run_dir = RunArchive.create_run_directory(cfg.output, cfg.command)
    path = run_dir / "panel.csv"
    if not ResultExporter.export_panel(panel, path):
        raise IcvError(f"could not write {path}")
    _finish(cfg, run_dir, [path])
    print(f"{panel.scheme.value} panel: {panel.p} assets x {panel.n} returns -> {path}")
    return 0


def cmd_estimate(cfg: RunConfig) -> int:
    """Covariance estimate for one day (or the window ending on it)."""
    est = cfg.estimate
    data = MarketData.from_directory(cfg.input, _rules(cfg))
    d = data.index_of(est.day) if est.day else len(data) - 1
    day = data.days[d]
    history = History(data, d + 1)
    run_dir = RunArchive.create_run_directory(cfg.output, cfg.command)

    if est.kind == "sqml":
        try:
            spec = StrategySpec("SQML", EstimatorKind(est.variant), J1=est.J1, dense_days=est.J - est.J1)
        except ValueError:
            raise InvalidConfig(f"unknown SQML variant {est.variant!r}") from None
        result = Backtester.sqml_for(spec, history, cfg.threads)
        out = run_dir / "sqml"
        if not ResultExporter.export_sqml_estimate(result, out):
            raise IcvError(f"could not write {out}")
        _finish(cfg, run_dir, [out / "basis.csv", out / "v_hat.csv", out / "sigma_hat.csv"])
        print(f"SQML ({est.variant}, J={est.J}, J1={est.J1}) through {day.label}: "
              f"{len(result.nonconverged)} non-converged fit(s) -> {out}")
        return 0

    builders: Dict[str, Callable[[], CovEstimate]] = {
        "rcv": lambda: CovarianceEstimators.realized_cov(day.refresh_panel.returns()),
        "tva": lambda: CovarianceEstimators.tva_cov(day.sparse_panel.returns()),
        "sample": lambda: CovarianceEstimators.sample_cov_daily(history.closes(est.J)),
        "ls": lambda: CovarianceEstimators.linear_shrinkage(
            CovarianceEstimators.sample_cov_daily(history.closes(est.J)), history.daily_returns(est.J))[0],
        "tscv": lambda: CovarianceEstimators.tscv_pairwise(day.series, None, est.tscv_K, est.tscv_J,
                                                           cfg.threads),
    }
    estimate = builders[est.kind]()
    path = run_dir / f"estimate_{est.kind}.csv"
    if not ResultExporter.export_cov_estimate(estimate, path):
        raise IcvError(f"could not write {path}")
    _finish(cfg, run_dir, [path])
    print(f"{estimate.kind.value} estimate through {day.label}: p={estimate.p}, "
          f"n_obs={estimate.n_obs} -> {path}")
    return 0


def parse_strategies(entries: Sequence[Dict[str, Any]]) -> List[StrategySpec]:
    specs = []
    for entry in entries:
        entry = dict(entry)
        try:
            entry["estimator"] = EstimatorKind(entry["estimator"])
            if "optimizer" in entry:
                entry["optimizer"] = OptimizerKind(entry["optimizer"])
            specs.append(StrategySpec(**entry))
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidConfig(f"bad strategy entry {entry}: {e}") from None
    if not specs:
        raise InvalidConfig("no strategies configured")
    return specs


def _sweep_grid(base: StrategySpec, start: int) -> Dict[str, List[int]]:
    """The published grid of base's estimator, cut to the history available before start."""
    grid = {}
    for key, values in PUBLISHED_GRIDS[base.estimator].items():
        floor = {k: min(v) for k, v in PUBLISHED_GRIDS[base.estimator].items() if k != key}
        grid[key] = [v for v in values if replace(base, **floor, **{key: v}).lookback() <= start]
        if not grid[key]:
            raise InvalidConfig(f"no {key} value of the {base.estimator.value} grid fits "
                                f"{start} days of history")
    return grid


def cmd_backtest(cfg: RunConfig) -> int:
    bt = cfg.backtest
    specs = [s.validate(bt.strict_grids) for s in parse_strategies(bt.strategies)]
    data = MarketData.from_directory(cfg.input, _rules(cfg))
    start = data.index_of(bt.eval_start) if bt.eval_start else max(s.lookback() for s in specs)
    stop = data.index_of(bt.eval_end) + 1 if bt.eval_end else len(data)
    if start >= stop:
        raise EmptyEvaluationWindow(f"evaluation window [{start}, {stop}) contains no days")

    report = Backtester.run_backtest(specs, data, (start, stop), cfg.threads)
    run_dir = RunArchive.create_run_directory(cfg.output, cfg.command)
    outputs = [run_dir / "report" / name for name in ("daily_returns.csv", "summary.csv", "rolling.csv")]
    if not ResultExporter.export_report(report, run_dir / "report"):
        raise IcvError(f"could not write {run_dir / 'report'}")

    # weights for the next session, formed after the close of the last evaluated day
    for spec in specs:
        try:
            weights = Backtester.weights_for_day(spec, History(data, stop))
        except (IcvError, np.linalg.LinAlgError, ValueError) as e:
            logger.warning("no closing weights for %s: %s", spec.name, e)
            continue
        weights.date = data.days[stop - 1].label
        path = run_dir / "weights" / f"{spec.name}.csv"
        if ResultExporter.export_weights(weights, path, data.symbols):
            outputs.append(path)

    if bt.split:
        for k, part in enumerate(Backtester.subperiod_split(report, bt.split), start=1):
            ResultExporter.export_report(part, run_dir / f"report_part{k}")
            outputs.append(run_dir / f"report_part{k}" / "summary.csv")
    if bt.sweep:
        matches = [s for s in specs if s.name == bt.sweep]
        if not matches or matches[0].estimator not in PUBLISHED_GRIDS:
            raise InvalidConfig(f"cannot sweep strategy {bt.sweep!r}")
        best, table = Backtester.grid_sweep(matches[0], _sweep_grid(matches[0], start),
                                            Objective(bt.objective), data, (start, stop), cfg.threads)
        outputs.append(run_dir / f"sweep_{bt.sweep}.csv")
        ResultExporter.export_table(table, outputs[-1])
        print(f"Best {bt.sweep} grid point: {best.name}")
    _finish(cfg, run_dir, outputs)

    print(f"Evaluated {len(report)} days ({report.dates[0]} .. {report.dates[-1]})")
    for row in Backtester.summary_table(report).itertuples(index=False):
        print(f"{row.strategy:<12} AV={row.AV:9.4f} SD={row.SD:9.4f} IR={row.IR:8.3f} {row.best}".rstrip())
    for name in report.strategies:
        if report.coverage(name) < 1.0:
            print(f"WARNING: {name} coverage {100 * report.coverage(name):.1f}%")
    return 0


def cmd_rmt_check(cfg: RunConfig) -> int:
    """Limiting (x, F, Psi, delta, g) tables for (H, y) and the audit report card."""
    rc = cfg.rmt_check
    H = ResultExporter.read_spectrum(rc.spectrum_file) if rc.spectrum_file else DEFAULT_SPECTRUM
    rows = RandomMatrixLimits.tables(H, rc.y)
    run_dir = RunArchive.create_run_directory(cfg.output, cfg.command)
    path = run_dir / "rmt_tables.csv"
    ResultExporter.export_rmt_tables(rows, path)

    if rc.simulations:
        issues = RmtAuditor.run_all(cfg.seed, rc.quick, H, rc.y)
    else:
        issues = [RmtAuditor.identity_population()] + RmtAuditor.audit_spectrum(H, rc.y)
    for issue in issues:
        print(issue.line())
    if rc.y < 1:
        sample = RandomMatrixLimits.limit_loss(H, rc.y, lambda x: x)
        optimal = RandomMatrixLimits.limit_loss(H, rc.y, RandomMatrixLimits.optimal_shrinkage_function(H, rc.y))
        print(f"limit loss: sample eigenvalues {sample:.6g}, optimal shrinkage {optimal:.6g}")
    _finish(cfg, run_dir, [path])
    return 1 if any(i.severity is IssueSeverity.ERROR for i in issues) else 0


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "sync": cmd_sync,
    "estimate": cmd_estimate,
    "backtest": cmd_backtest,
    "rmt-check": cmd_rmt_check,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.verbose, args.quiet)
    try:
        cfg = RunConfig.load(args.config)
        cfg.command = args.command
        cfg.apply_overrides(_overrides(args))
        cfg.validate()
        return COMMANDS[args.command](cfg)
    except (InvalidConfig, EmptyEvaluationWindow, UnitRatioExcluded) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (IcvError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
