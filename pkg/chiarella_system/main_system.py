"""
Chiarella Excess-Volatility Research System - pipeline orchestration and command line

    python -m chiarella_system.main_system simulate --kappa 0.01 --beta 0.5 --gamma 2 --alpha 0.142857
    python -m chiarella_system.main_system phase-portrait --kappa 0.05 --beta 0.65 --gamma 10 --alpha 0.142857
    python -m chiarella_system.main_system calibrate --config configs/historical_run.yaml
    python -m chiarella_system.main_system analyze --config configs/historical_run.yaml
    python -m chiarella_system.main_system backtest --config configs/historical_run.yaml
"""
import argparse
import logging
import os
import sys
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .config import LOG_FORMAT, LOG_LEVEL, LOGS_DIR, RunConfig, load_run_config
from .errors import ChiarellaError, ConfigError, InputDataError, ParameterError, PartialFailureError
from .reporting import ReportWriter, StageCache, content_hash
from .data_sources.price_series_loader import PriceSeriesLoader, file_digest
from .data_sources.preprocessing import CleanSeries, preprocess_series
from .estimation.trend_estimation import estimate_class_trend, rolling_average_curve, trend_pairs, normalize
from .estimation.filtering import StateSpaceSpec, run_filter
from .estimation.calibration import CalibrationReport, ClassCalibration, three_step_calibrate
from .analysis.mispricing_analysis import (BimodalityRow, MispricingSample, SampleSource, bimodality_table,
                                           bimodality_verdict, js_distance, mispricing_histogram,
                                           numerical_bimodality, numerical_verdict, silverman_test,
                                           variance_match)
from .analysis.sloppiness import average_class_hessian, sloppiness_hessian
from .analysis.backtest import backtest_signals
from .model.model_core import ChiarellaParams, SystemState, classify_regime, nullclines, velocity_field
from .model.simulator import (integrate_deterministic, limit_cycle_metrics, simulate_discrete,
                              simulate_sde)

logger = logging.getLogger(__name__)


def setup_logging(level: str = LOG_LEVEL) -> None:
    os.makedirs(LOGS_DIR, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(f"{LOGS_DIR}/chiarella_system.log"),
            logging.StreamHandler()
        ]
    )


class ChiarellaResearchSystem:
    def __init__(self, config: RunConfig):
        """Wire loader, writer and caches for one run configuration"""
        self.name = "Chiarella Excess-Volatility Research System"
        self.version = "1.0"
        self.config = config
        self.loader = PriceSeriesLoader()
        self.writer = ReportWriter(config.output_dir)
        self.cache = StageCache(self.writer, 'calibration')
        logger.info(f"Initialized {self.name} v{self.version} -> {config.output_dir}")

    # ----- preprocessing -------------------------------------------------

    def load_clean_series(self) -> Tuple[Dict[str, CleanSeries], Dict[str, str]]:
        series, failures = {}, {}
        for asset in sorted(self.config.assets, key=lambda a: a.id):
            try:
                raw = self.loader.load(asset)
                series[asset.id] = preprocess_series(raw, asset.exclusion_windows,
                                                     self.config.drift_order_override)
            except ChiarellaError as e:
                logger.error(f"Preprocessing failed for {asset.id}: {e}")
                failures[asset.id] = f"{type(e).__name__}: {e}"
        return series, failures

    def _asset_digest(self, asset) -> str:
        parts = [file_digest(asset.csv_path)]
        if asset.cpi_path:
            parts.append(file_digest(asset.cpi_path))
        cfg = self.config
        return content_hash(*parts, asset.to_dict(), cfg.model, cfg.alpha_grid, cfg.drift_order_override,
                            cfg.em.to_dict(), sorted(a.id for a in cfg.assets if a.asset_class == asset.asset_class))

    # ----- calibration ---------------------------------------------------

    def calibrate(self) -> Dict[str, ClassCalibration]:
        series, failures = self.load_clean_series()
        results: Dict[str, ClassCalibration] = {}

        for asset_class, assets in self.config.asset_classes().items():
            members = {a.id: series[a.id] for a in assets if a.id in series}
            if not members:
                continue
            try:
                digests = {a.id: self._asset_digest(a) for a in assets if a.id in members}
                class_digest = content_hash(digests)
                cached = self.cache.get(f"class_{asset_class}", class_digest)
                if cached is not None:
                    calibration = ClassCalibration.from_dict(cached)
                else:
                    calibration = self._calibrate_class(asset_class, members)
                    self.cache.put(f"class_{asset_class}", class_digest, calibration)
                for asset_id, report in calibration.per_asset.items():
                    report.input_hash = digests.get(asset_id)
                failures.update(calibration.failures)
                results[asset_class] = calibration
                self._write_calibration(calibration, members)
            except ChiarellaError as e:
                logger.error(f"Calibration failed for class {asset_class}: {e}")
                for asset_id in members:
                    failures.setdefault(asset_id, f"{type(e).__name__}: {e}")
                continue

        self._finish(failures)
        return results

    def _calibrate_class(self, asset_class: str, members: Dict[str, CleanSeries]) -> ClassCalibration:
        trend = estimate_class_trend(asset_class, {k: s.dedrifted for k, s in members.items()},
                                     grid=self.config.alpha_grid)
        self.writer.write_json(f"trend/class_{asset_class}.json", trend.fit)
        xs, ys = [], []
        for asset_id in sorted(members):
            m, fwd, _ = trend_pairs(members[asset_id].dedrifted, trend.fit.alpha)
            xs.append(normalize(m))
            ys.append(normalize(fwd))
        self.writer.write_csv(f"trend/class_{asset_class}_rollavg.csv",
                              rolling_average_curve(np.concatenate(xs), np.concatenate(ys)))

        per_asset_trend = {}
        for asset_id in members:
            fit = trend.asset_fit(asset_id)
            per_asset_trend[asset_id] = (fit.alpha, fit.gamma, fit.gamma_err)
        return three_step_calibrate(asset_class, members, per_asset_trend, model=self.config.model,
                                    tol=self.config.em.tol, max_iter=self.config.em.max_iter,
                                    workers=self.config.workers)

    def _write_calibration(self, calibration: ClassCalibration, members: Dict[str, CleanSeries]) -> None:
        c = calibration.asset_class
        self.writer.write_json(f"calibration/class_{c}.json", calibration)
        self.writer.write_csv(f"calibration/table_{c}.csv", calibration.to_table())
        for asset_id, report in sorted(calibration.per_asset.items()):
            self.writer.write_json(f"calibration/{asset_id}.json", report)
            clean = members[asset_id]
            self.writer.write_csv(f"clean/{asset_id}.csv", clean.to_frame())
            result = run_filter(StateSpaceSpec(report.theta, clean.dedrifted, report.initial_variance))
            self.writer.write_csv(f"filter/{asset_id}.csv", result.to_frame(clean.dates))

    def load_calibration(self) -> Dict[str, CalibrationReport]:
        reports = {}
        for asset in self.config.assets:
            raw = self.writer.read_json(f"calibration/{asset.id}.json")
            if raw is None:
                logger.warning(f"No calibration artifact for {asset.id}")
                continue
            reports[asset.id] = CalibrationReport.from_dict(raw)
        if not reports:
            raise InputDataError(f"no calibration artifacts under {self.config.output_dir}; run 'calibrate' first")
        return reports

    # ----- analysis ------------------------------------------------------

    def analyze(self) -> Dict:
        reports = self.load_calibration()
        series, failures = self.load_clean_series()
        cfg = self.config
        rows: List[BimodalityRow] = []
        slopes: Dict[str, list] = {}
        classes = {a.id: a.asset_class for a in cfg.assets}

        for asset_id in sorted(series):
            if asset_id not in reports:
                failures[asset_id] = "InputDataError: no calibration artifact"
                continue
            try:
                row, sloppy = self._analyze_asset(reports[asset_id], series[asset_id])
                rows.append(row)
                slopes.setdefault(classes[asset_id], []).append(sloppy)
            except ChiarellaError as e:
                logger.error(f"Analysis failed for {asset_id}: {e}")
                failures[asset_id] = f"{type(e).__name__}: {e}"
                continue

        self.writer.write_json("analysis/bimodality.json", [r.to_dict() for r in sorted(rows, key=lambda r: r.asset)])
        self.writer.write_csv("analysis/bimodality.csv", bimodality_table(rows))
        for asset_class, items in sorted(slopes.items()):
            try:
                self.writer.write_json(f"analysis/sloppiness/class_{asset_class}.json", average_class_hessian(items))
            except ChiarellaError as e:
                logger.error(f"Class Hessian failed for {asset_class}: {e}")
        self.backtest(reports, series, failures)
        return {'bimodality': rows, 'failures': failures}

    def _analyze_asset(self, report: CalibrationReport, clean: CleanSeries):
        cfg = self.config
        theta = report.theta
        result = run_filter(StateSpaceSpec(theta, clean.dedrifted, report.initial_variance))
        filtered = MispricingSample(clean.dedrifted - result.v_filt, SampleSource.FILTERED_EMPIRICAL)
        smoothed = MispricingSample(clean.dedrifted - result.v_smooth, SampleSource.SMOOTHED_EMPIRICAL)

        p_f = silverman_test(filtered, n_boot=cfg.silverman.n_boot, seed=cfg.silverman.seed).p_value
        p_s = silverman_test(smoothed, n_boot=cfg.silverman.n_boot, seed=cfg.silverman.seed).p_value

        def per_step_loglik(t: ChiarellaParams) -> float:
            return run_filter(StateSpaceSpec(t, clean.dedrifted, report.initial_variance), smooth=False).loglik_per_step

        matched = variance_match(theta, float(np.mean(smoothed.delta)), float(np.var(smoothed.delta)),
                                 loglik=per_step_loglik, seed=cfg.simulation.seed or 0)
        self.writer.write_json(f"analysis/variance_match/{report.asset_id}.json", matched)

        seed = cfg.simulation.seed or 0
        numerical = numerical_bimodality(matched.theta, seed=seed, dt=cfg.simulation.dt,
                                         horizon=cfg.simulation.horizon, n_boot=cfg.silverman.n_boot,
                                         subsample_points=cfg.silverman.subsample_points)
        simulated = simulate_discrete(matched.theta, max(len(clean) * 10, 1000), seed).delta + matched.mean_offset

        row = BimodalityRow(
            asset=report.asset_id,
            p_filtered=p_f,
            p_smoothed=p_s,
            verdict_empirical=bimodality_verdict(p_f, p_s, cfg.silverman.significance),
            p_numerical=numerical.p_value,
            verdict_numerical=numerical_verdict(numerical.p_value, cfg.silverman.significance),
            js_distance=js_distance(smoothed, simulated),
        )
        self.writer.write_csv(f"analysis/histograms/{report.asset_id}.csv", mispricing_histogram({
            'filtered': filtered.delta, 'smoothed': smoothed.delta, 'simulated': simulated,
        }))

        sloppy = sloppiness_hessian(theta, delta_rel=cfg.sloppiness.delta_rel, seed=cfg.sloppiness.seed,
                                    horizon=cfg.sloppiness.horizon,
                                    burn_in_fraction=cfg.sloppiness.burn_in_fraction, workers=cfg.workers)
        self.writer.write_json(f"analysis/sloppiness/{report.asset_id}.json", sloppy)
        logger.info(f"{report.asset_id}: verdict {row.verdict_empirical}/{row.verdict_numerical}, "
                    f"JS={row.js_distance:.3f}, decades={sloppy.decades_spanned:.2f}")
        return row, sloppy

    def backtest(self, reports: Optional[Dict[str, CalibrationReport]] = None,
                 series: Optional[Dict[str, CleanSeries]] = None,
                 failures: Optional[Dict[str, str]] = None) -> Dict:
        reports = reports if reports is not None else self.load_calibration()
        if series is None:
            series, failures = self.load_clean_series()
        failures = failures if failures is not None else {}

        summaries = []
        for asset_id in sorted(series):
            if asset_id not in reports:
                failures[asset_id] = "InputDataError: no calibration artifact"
                continue
            try:
                report, clean = reports[asset_id], series[asset_id]
                result = run_filter(StateSpaceSpec(report.theta, clean.dedrifted, report.initial_variance),
                                    smooth=False)
                outcome = backtest_signals(report.theta, clean, result, split_date=self.config.backtest.split_date)
                self.writer.write_csv(f"analysis/backtest/{asset_id}.csv", outcome.to_frame())
                summaries.append(outcome.summary())
            except ChiarellaError as e:
                logger.error(f"Backtest failed for {asset_id}: {e}")
                failures[asset_id] = f"{type(e).__name__}: {e}"
                continue
        self.writer.write_json("analysis/backtest_summary.json", summaries)
        self._finish(failures)
        return {'backtest': summaries, 'failures': failures}

    def _finish(self, failures: Dict[str, str]) -> None:
        self.writer.write_json("failures.json", failures)
        if failures:
            raise PartialFailureError(failures)

    def get_system_status(self) -> Dict:
        return {
            "system_name": self.name,
            "version": self.version,
            "assets": len(self.config.assets),
            "classes": sorted(self.config.asset_classes()),
            "model": self.config.model,
            "output_dir": self.config.output_dir,
        }


# ----- command line ------------------------------------------------------

def _add_param_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--kappa', type=float, required=True)
    parser.add_argument('--beta', type=float, required=True)
    parser.add_argument('--gamma', type=float, required=True)
    parser.add_argument('--alpha', type=float, required=True)
    parser.add_argument('--kappa3', type=float, default=0.0)
    parser.add_argument('--sigma-n', type=float, default=0.0)
    parser.add_argument('--sigma-v', type=float, default=0.0)
    parser.add_argument('--v0', type=float, default=0.0)


def _params_from(args) -> ChiarellaParams:
    return ChiarellaParams(kappa=args.kappa, beta=args.beta, gamma=args.gamma, alpha=args.alpha,
                           kappa3=args.kappa3, sigma_n=args.sigma_n, sigma_v=args.sigma_v, v0=args.v0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='chiarella', description="Chiarella excess-volatility research system")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="YAML run configuration")
    common.add_argument('--seed', type=int, help="override every configured seed")
    common.add_argument('--workers', type=int, help="asset-level worker processes")
    common.add_argument('--output', help="output directory")
    sub = parser.add_subparsers(dest='command', required=True)

    sim = sub.add_parser('simulate', parents=[common], help="simulate a trajectory")
    _add_param_flags(sim)
    sim.add_argument('--mode', choices=('deterministic', 'sde', 'discrete'), default='deterministic')
    sim.add_argument('--method', choices=('rk4', 'euler'), default='rk4')
    sim.add_argument('--init', type=float, nargs=3, metavar=('P0', 'V0', 'M0'), default=(0.1, 0.0, 0.0))
    sim.add_argument('--horizon', type=float)
    sim.add_argument('--dt', type=float)
    sim.add_argument('--record-every', type=int, default=1)

    phase = sub.add_parser('phase-portrait', parents=[common], help="nullclines and velocity field")
    _add_param_flags(phase)
    phase.add_argument('--m-range', type=float, nargs=2, default=(-2.0, 2.0))
    phase.add_argument('--delta-range', type=float, nargs=2)
    phase.add_argument('--grid-n', type=int, default=50)

    for name, text in (('calibrate', "three-step EM calibration"),
                       ('analyze', "bimodality, sloppiness and backtest reports"),
                       ('backtest', "signal backtest on calibration artifacts")):
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _run_config(args, require_assets: bool) -> RunConfig:
    if args.config:
        cfg = load_run_config(args.config, require_assets=require_assets)
    elif require_assets:
        raise ConfigError(f"'{args.command}' needs --config")
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg.simulation.seed = args.seed
        cfg.silverman.seed = args.seed
        cfg.sloppiness.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.output:
        cfg.output_dir = args.output
    return cfg.validate(require_assets=require_assets)


def cmd_simulate(args) -> Dict:
    cfg = _run_config(args, require_assets=False)
    params = _params_from(args)
    init = SystemState(p=args.init[0], v=args.init[1], m=args.init[2])
    writer = ReportWriter(cfg.output_dir)

    if args.mode == 'deterministic':
        traj = integrate_deterministic(params, init, dt=args.dt or 0.1, horizon=args.horizon or 3000.0,
                                       method=args.method, record_every=args.record_every)
    elif args.mode == 'sde':
        if cfg.simulation.seed is None:
            raise ConfigError("stochastic simulation needs a seed (--seed or simulation.seed)")
        traj = simulate_sde(params, init, dt=args.dt or cfg.simulation.dt,
                            horizon=args.horizon or cfg.simulation.horizon, seed=cfg.simulation.seed,
                            record_every=args.record_every)
    else:
        if cfg.simulation.seed is None:
            raise ConfigError("stochastic simulation needs a seed (--seed or simulation.seed)")
        traj = simulate_discrete(params, int(args.horizon or 2000), cfg.simulation.seed, init)

    summary = {'mode': args.mode, 'params': params.to_dict(), 'seed': traj.seed, 'steps': len(traj)}
    if params.is_linear and params.kappa > 0:
        summary.update(classify_regime(params).summary())
    if args.mode == 'deterministic':
        metrics = limit_cycle_metrics(traj)
        summary['limit_cycle'] = None if metrics is None else {'amplitude': metrics.amplitude,
                                                              'period': metrics.period}
    traj.to_csv(writer.path('simulation', 'trajectory.csv'))
    writer.write_json('simulation/summary.json', summary)
    return summary


def _grid_axis(lo: float, hi: float, n: int) -> np.ndarray:
    """Evenly spaced axis that always passes through the origin when the range straddles it"""
    axis = np.linspace(lo, hi, n)
    if lo < 0.0 < hi:
        nearest = int(np.argmin(np.abs(axis)))
        if abs(axis[nearest]) <= 1e-9 * (hi - lo):
            axis[nearest] = 0.0
        else:
            axis = np.insert(axis, np.searchsorted(axis, 0.0), 0.0)
    return axis


def phase_portrait_frames(params: ChiarellaParams, m_range, grid_n: int, delta_range=None):
    if not params.is_linear:
        raise ParameterError("phase portrait is only available for the linear model")
    m = _grid_axis(m_range[0], m_range[1], grid_n)
    on_delta, on_m = nullclines(params, m)
    lines = pd.DataFrame({'m': m, 'delta_nullcline': on_delta, 'm_nullcline': on_m})

    if delta_range is None:
        bound = float(np.max(np.abs(on_delta))) or 1.0
        delta_range = (-bound, bound)
    deltas = _grid_axis(delta_range[0], delta_range[1], grid_n)
    dd, mm = np.meshgrid(deltas, m, indexing='ij')
    d_dot, m_dot = velocity_field(params, dd, mm)
    field = pd.DataFrame({'delta': dd.ravel(), 'm': mm.ravel(),
                          'd_delta': d_dot.ravel(), 'd_m': m_dot.ravel()})
    return lines, field


def cmd_phase_portrait(args) -> Dict:
    cfg = _run_config(args, require_assets=False)
    params = _params_from(args)
    lines, field = phase_portrait_frames(params, args.m_range, args.grid_n, args.delta_range)
    writer = ReportWriter(cfg.output_dir)
    writer.write_csv('phase/nullclines.csv', lines)
    writer.write_csv('phase/field.csv', field)
    return {'nullcline_rows': len(lines), 'field_rows': len(field)}


def cmd_calibrate(args) -> Dict:
    system = ChiarellaResearchSystem(_run_config(args, require_assets=True))
    return system.calibrate()


def cmd_analyze(args) -> Dict:
    system = ChiarellaResearchSystem(_run_config(args, require_assets=True))
    return system.analyze()


def cmd_backtest(args) -> Dict:
    system = ChiarellaResearchSystem(_run_config(args, require_assets=True))
    return system.backtest()


COMMANDS = {
    'simulate': cmd_simulate,
    'phase-portrait': cmd_phase_portrait,
    'calibrate': cmd_calibrate,
    'analyze': cmd_analyze,
    'backtest': cmd_backtest,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns 0 ok, 2 config/input, 3 numerical, 4 partial failure"""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging()
    try:
        COMMANDS[args.command](args)
        return 0
    except ChiarellaError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
