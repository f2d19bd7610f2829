"""
Configuration for the Chiarella excess-volatility research system
"""
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import yaml
from dataclasses_json import dataclass_json
from dotenv import load_dotenv

from .errors import ConfigError

load_dotenv()

# Logging Configuration
LOG_LEVEL = os.getenv('CHIARELLA_LOG_LEVEL', 'INFO')
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# File Paths
RESULTS_DIR = os.getenv('CHIARELLA_OUTPUT_DIR', 'results')
LOGS_DIR = "logs"
CACHE_DIRNAME = "cache"

# Parallelism
WORKERS = int(os.getenv('CHIARELLA_WORKERS', '1'))

# EM calibration
EM_TOLERANCE = 1e-5          # gain in total log-likelihood
EM_MAX_ITER = 500
EM_MONOTONE_SLACK = 1e-9     # relative to |total log-likelihood|
SIGMA_FLOOR = 1e-8
VARIANCE_FLOOR = 1e-14
INITIAL_VARIANCE_FACTOR = 5.0   # P0 = (5 sigma_V)^2
MIN_SERIES_LENGTH = 120         # ten years of months

# EM starting point (magnitudes of the calibrated index class)
EM_INIT = {
    'kappa': 0.05,
    'beta': 0.05,
    'kappa3': 0.5,
    'sigma_ratio': 4.0,
}

# Excess-volatility ratio search
SIGMA_RATIO_BOUNDS = (1.0, 50.0)
SIGMA_RATIO_TOL = 1e-3

# Standard errors
HESSIAN_REL_STEP = 1e-4
HESSIAN_SCALE_FLOOR = 1e-2

# Unscented transform (scalar state, 3 sigma points, Gaussian 4th moment exact)
UKF_ALPHA = 1.0
UKF_BETA = 0.0
UKF_KAPPA = 2.0

# Trend estimation
ALPHA_GRID = [1.0 / n for n in range(2, 25)]
TANH_START_GAMMAS = (0.1, 0.3, 1.0)
TANH_MIN_POINTS = 100
ROLLING_WINDOW = 1000

# Simulation
SDE_DT = 0.01
SDE_HORIZON = 1e5
DETERMINISTIC_DT = 0.1
NOISE_CHUNK = 1_000_000
STREAM_TAGS = {'N': 0, 'V': 1}

# Bimodality / distance statistics
SILVERMAN_SIGNIFICANCE = 0.02
SILVERMAN_N_BOOT = 500
SILVERMAN_MODES = 1
KDE_GRID_POINTS = 1024
KDE_GRID_PAD = 3.0
SUBSAMPLE_POINTS = 10 ** 6
MIN_SAMPLE_SIZE = 20

# Variance matching
VARIANCE_MATCH_TOL = 0.01
VARIANCE_MATCH_MAX_LOGLIK_DROP = 0.05
VARIANCE_MATCH_HORIZON = 20_000

# Sloppiness
SLOPPINESS_DELTA_REL = 1e-2
SLOPPINESS_HORIZON = 10_000
SLOPPINESS_BURN_IN = 0.1

# Backtest
BACKTEST_EWMA_DECAY = 1.0 / 7.0
BACKTEST_WARMUP_MONTHS = 12
BACKTEST_SPLIT_DATE = "1950-01-01"

MODELS = ('linear', 'cubic')


@dataclass_json
@dataclass
class AssetConfig:
    id: str
    csv_path: str
    asset_class: str = 'default'
    exclusion_windows: List[List[str]] = field(default_factory=list)
    cpi_path: Optional[str] = None


@dataclass_json
@dataclass
class EMConfig:
    tol: float = EM_TOLERANCE
    max_iter: int = EM_MAX_ITER


@dataclass_json
@dataclass
class SilvermanConfig:
    n_boot: int = SILVERMAN_N_BOOT
    significance: float = SILVERMAN_SIGNIFICANCE
    subsample_points: int = SUBSAMPLE_POINTS
    seed: int = 0


@dataclass_json
@dataclass
class SloppinessConfig:
    delta_rel: float = SLOPPINESS_DELTA_REL
    horizon: int = SLOPPINESS_HORIZON
    seed: int = 0
    burn_in_fraction: float = SLOPPINESS_BURN_IN


@dataclass_json
@dataclass
class SimulationConfig:
    dt: float = SDE_DT
    horizon: float = SDE_HORIZON
    seed: Optional[int] = None


@dataclass_json
@dataclass
class BacktestConfig:
    split_date: str = BACKTEST_SPLIT_DATE


@dataclass_json
@dataclass
class RunConfig:
    assets: List[AssetConfig] = field(default_factory=list)
    model: str = 'linear'
    alpha_grid: List[float] = field(default_factory=lambda: list(ALPHA_GRID))
    drift_order_override: Optional[int] = None
    em: EMConfig = field(default_factory=EMConfig)
    silverman: SilvermanConfig = field(default_factory=SilvermanConfig)
    sloppiness: SloppinessConfig = field(default_factory=SloppinessConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    workers: int = WORKERS
    output_dir: str = RESULTS_DIR

    def validate(self, require_assets: bool = True) -> 'RunConfig':
        if require_assets and not self.assets:
            raise ConfigError("config lists no assets")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model '{self.model}', expected one of {MODELS}")
        paths = [a.csv_path for a in self.assets] + [a.cpi_path for a in self.assets if a.cpi_path]
        if len(paths) != len(set(paths)):
            raise ConfigError("asset paths must be distinct")
        ids = [a.id for a in self.assets]
        if len(ids) != len(set(ids)):
            raise ConfigError("asset ids must be distinct")
        if not 0.0 < self.silverman.significance < 1.0:
            raise ConfigError("silverman.significance must lie in (0, 1)")
        if not self.alpha_grid or any(not 0.0 < a <= 1.0 for a in self.alpha_grid):
            raise ConfigError("alpha_grid must be a non-empty subset of (0, 1]")
        if self.drift_order_override is not None and self.drift_order_override < 0:
            raise ConfigError("drift_order_override must be >= 0")
        if self.em.tol <= 0 or self.em.max_iter < 1:
            raise ConfigError("em.tol must be > 0 and em.max_iter >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self

    def asset_classes(self) -> Dict[str, List[AssetConfig]]:
        classes: Dict[str, List[AssetConfig]] = {}
        for asset in sorted(self.assets, key=lambda a: a.id):
            classes.setdefault(asset.asset_class, []).append(asset)
        return classes


def load_run_config(path: str, require_assets: bool = True) -> RunConfig:
    """Load a YAML run config; relative asset paths resolve against the config file"""
    try:
        with open(path, 'r') as f:
            raw = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e

    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")

    # top-level holder for YAML anchors (shared exclusion windows)
    raw.pop('windows', None)
    base_dir = os.path.dirname(os.path.abspath(path))
    for asset in raw.get('assets', []) or []:
        if 'class' in asset and 'asset_class' not in asset:
            asset['asset_class'] = asset.pop('class')
        for key in ('csv_path', 'cpi_path'):
            if asset.get(key) and not os.path.isabs(asset[key]):
                asset[key] = os.path.join(base_dir, asset[key])

    try:
        run_config = RunConfig.from_dict(raw)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid config {path}: {e}") from e
    return run_config.validate(require_assets=require_assets)
