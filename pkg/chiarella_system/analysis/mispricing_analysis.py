"""
Mispricing Analysis - distribution statistics of delta = p - v: Silverman's
multimodality test, Jensen-Shannon distance between empirical and simulated
distributions, and the variance matching of calibrated parameters
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from dataclasses_json import dataclass_json
from scipy.optimize import brentq
from scipy.spatial.distance import jensenshannon

from ..config import (KDE_GRID_PAD, KDE_GRID_POINTS, MIN_SAMPLE_SIZE, SDE_DT, SDE_HORIZON,
                      SILVERMAN_MODES, SILVERMAN_N_BOOT, SILVERMAN_SIGNIFICANCE, SUBSAMPLE_POINTS,
                      VARIANCE_MATCH_HORIZON, VARIANCE_MATCH_MAX_LOGLIK_DROP, VARIANCE_MATCH_TOL)
from ..errors import BandwidthBracketError, ChiarellaError, InputDataError, ParameterError
from ..model.model_core import ChiarellaParams, SystemState
from ..model.simulator import simulate_discrete, simulate_sde

logger = logging.getLogger(__name__)

MIN_BOOTSTRAP = 200
BANDWIDTH_RTOL = 1e-3
KERNEL_HALF_WIDTH = 4.0
MODE_FLOOR = 1e-10


class SampleSource(str, Enum):
    FILTERED_EMPIRICAL = 'FilteredEmpirical'
    SMOOTHED_EMPIRICAL = 'SmoothedEmpirical'
    SIMULATED = 'Simulated'


@dataclass(frozen=True)
class MispricingSample:
    delta: np.ndarray
    source: SampleSource

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=float)
        if not np.all(np.isfinite(delta)):
            raise InputDataError("mispricing sample must be finite")
        if len(delta) < MIN_SAMPLE_SIZE:
            raise InputDataError(f"mispricing sample needs at least {MIN_SAMPLE_SIZE} points, got {len(delta)}")
        object.__setattr__(self, 'delta', delta)

    @property
    def n(self) -> int:
        return len(self.delta)


def _as_array(sample) -> np.ndarray:
    return sample.delta if isinstance(sample, MispricingSample) else np.asarray(sample, dtype=float)


def kde_on_grid(x: np.ndarray, h: float, grid_points: int = KDE_GRID_POINTS):
    """Binned Gaussian KDE over [min - 3h, max + 3h]; returns (grid, density)"""
    lo, hi = x.min() - KDE_GRID_PAD * h, x.max() + KDE_GRID_PAD * h
    step = (hi - lo) / (grid_points - 1)
    idx = np.clip(np.rint((x - lo) / step).astype(np.int64), 0, grid_points - 1)
    counts = np.bincount(idx, minlength=grid_points).astype(float)
    half = int(min(math.ceil(KERNEL_HALF_WIDTH * h / step), (grid_points - 1) // 2))
    offsets = np.arange(-half, half + 1) * step
    kernel = np.exp(-0.5 * (offsets / h) ** 2)
    density = np.convolve(counts, kernel, mode='same') / (len(x) * h * math.sqrt(2.0 * math.pi))
    return lo + step * np.arange(grid_points), density


def count_modes(x: np.ndarray, h: float) -> int:
    """Strict local maxima of the KDE at bandwidth h"""
    _, density = kde_on_grid(x, h)
    floor = MODE_FLOOR * density.max()
    inner = density[1:-1]
    peaks = (inner > density[:-2]) & (inner > density[2:]) & (inner > floor)
    return int(np.count_nonzero(peaks))


def critical_bandwidth(x: Sequence[float], k: int = SILVERMAN_MODES) -> float:
    """Smallest bandwidth whose KDE has at most k modes, by bisection in log h"""
    x = np.asarray(x, dtype=float)
    spread = float(x.max() - x.min())
    if spread <= 0:
        raise BandwidthBracketError("sample has zero range; critical bandwidth undefined")
    lo, hi = spread * 1e-4, spread * 2.0
    if count_modes(x, lo) <= k or count_modes(x, hi) > k:
        raise BandwidthBracketError(f"mode count does not bracket k={k} on [{lo:.3g}, {hi:.3g}]")
    while hi / lo > 1.0 + BANDWIDTH_RTOL:
        mid = math.sqrt(lo * hi)
        if count_modes(x, mid) > k:
            lo = mid
        else:
            hi = mid
    return hi


@dataclass_json
@dataclass
class SilvermanResult:
    p_value: float
    h_crit: float
    k: int
    n_boot: int
    n: int
    subsample_factor: int = 1


def silverman_test(sample, k: int = SILVERMAN_MODES, n_boot: int = SILVERMAN_N_BOOT,
                   seed: int = 0) -> SilvermanResult:
    """
    H0: at most k modes. p = share of smoothed-bootstrap samples (variance
    rescaled by 1/sqrt(1 + h^2/s^2)) that still show more than k modes at h_crit.
    """
    x = _as_array(sample)
    if len(x) < MIN_SAMPLE_SIZE:
        raise InputDataError(f"Silverman test needs at least {MIN_SAMPLE_SIZE} points, got {len(x)}")
    if n_boot < MIN_BOOTSTRAP:
        raise ParameterError(f"n_boot must be >= {MIN_BOOTSTRAP}, got {n_boot}")

    h_crit = critical_bandwidth(x, k)
    rng = np.random.default_rng(seed)
    mean, var = float(np.mean(x)), float(np.var(x))
    shrink = 1.0 / math.sqrt(1.0 + h_crit ** 2 / var)
    exceed = 0
    for _ in range(n_boot):
        resample = rng.choice(x, size=len(x), replace=True)
        noise = rng.standard_normal(len(x))
        y = mean + shrink * (resample - mean + h_crit * noise)
        if count_modes(y, h_crit) > k:
            exceed += 1
    p_value = exceed / n_boot
    logger.info(f"Silverman test: n={len(x)}, h_crit={h_crit:.5g}, p={p_value:.4f}")
    return SilvermanResult(p_value=p_value, h_crit=h_crit, k=k, n_boot=n_boot, n=len(x))


def bimodality_verdict(p_filtered: float, p_smoothed: float,
                       significance: float = SILVERMAN_SIGNIFICANCE) -> str:
    """Twofold rejection means bimodal, twofold acceptance unimodal, disagreement inconclusive"""
    rejected = (p_filtered < significance, p_smoothed < significance)
    if all(rejected):
        return 'bimodal'
    if not any(rejected):
        return 'unimodal'
    return 'inconclusive'


def numerical_verdict(p_value: float, significance: float = SILVERMAN_SIGNIFICANCE) -> str:
    return 'bimodal' if p_value < significance else 'unimodal'


def thinning_factor(n_points: int, max_points: int = SUBSAMPLE_POINTS) -> int:
    """Smallest uniform stride that keeps at most max_points of n_points"""
    return max(1, int(math.ceil(n_points / max_points)))


def numerical_bimodality(params: ChiarellaParams, seed: int, dt: float = SDE_DT, horizon: float = SDE_HORIZON,
                         n_boot: int = SILVERMAN_N_BOOT, subsample_points: int = SUBSAMPLE_POINTS,
                         init: Optional[SystemState] = None) -> SilvermanResult:
    """Silverman test on the mispricing of a long Euler-Maruyama run"""
    init = init or SystemState(p=params.v0, v=params.v0, m=0.0)
    # thinned while recording; the full path never sits in memory
    n_points = int(round(horizon / dt)) + 1
    factor = thinning_factor(n_points, subsample_points)
    traj = simulate_sde(params, init, dt=dt, horizon=horizon, seed=seed, record_every=factor)
    logger.info(f"Numerical bimodality: {n_points} points, subsample factor {factor}")
    result = silverman_test(traj.delta, n_boot=n_boot, seed=seed)
    result.subsample_factor = factor
    return result


def js_distance(sample_a, sample_b) -> float:
    """Square root of the base-2 J-S divergence of two histograms on a shared support"""
    a, b = _as_array(sample_a), _as_array(sample_b)
    if len(a) == 0 or len(b) == 0:
        raise InputDataError("J-S distance needs two non-empty samples")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    bins = max(1, int(math.floor(math.sqrt(min(len(a), len(b))))))
    if hi <= lo or bins == 1:
        logger.warning("J-S distance: all mass falls into a single bin, returning 0")
        return 0.0
    pa, _ = np.histogram(a, bins=bins, range=(lo, hi))
    pb, _ = np.histogram(b, bins=bins, range=(lo, hi))
    for name, counts in (('first', pa), ('second', pb)):
        if np.count_nonzero(counts) == 1:
            logger.warning(f"J-S distance: the {name} sample falls into a single bin of {bins}")
    return float(jensenshannon(pa, pb, base=2.0))


def mispricing_histogram(samples: Dict[str, np.ndarray], bins: Optional[int] = None) -> pd.DataFrame:
    """Densities of several mispricing samples on a shared support"""
    arrays = {name: np.asarray(x, dtype=float) for name, x in samples.items()}
    lo = min(x.min() for x in arrays.values())
    hi = max(x.max() for x in arrays.values())
    bins = bins or max(1, int(math.sqrt(min(len(x) for x in arrays.values()))))
    edges = np.linspace(lo, hi, bins + 1)
    frame = pd.DataFrame({'bin_left': edges[:-1], 'bin_right': edges[1:]})
    for name in sorted(arrays):
        frame[name], _ = np.histogram(arrays[name], bins=edges, density=True)
    return frame


@dataclass_json
@dataclass
class BimodalityRow:
    asset: str
    p_filtered: float
    p_smoothed: float
    verdict_empirical: str
    p_numerical: Optional[float] = None
    verdict_numerical: Optional[str] = None
    js_distance: Optional[float] = None


@dataclass_json
@dataclass
class VarianceMatch:
    theta: ChiarellaParams
    matched: bool
    within_budget: bool
    simulated_var: float
    target_var: float
    loglik_drop: float
    step: float
    mean_offset: float = 0.0
    direction: Dict[str, float] = field(default_factory=dict)


VARIANCE_DIRECTION_PARAMS = ('kappa', 'kappa3', 'beta', 'gamma', 'sigma_n', 'sigma_v')


def _simulated_moments(theta: ChiarellaParams, horizon: int, seed: int):
    delta = simulate_discrete(theta, horizon, seed).delta
    burn = len(delta) // 10
    return float(np.mean(delta[burn:])), float(np.var(delta[burn:]))


def variance_match(theta: ChiarellaParams, target_mean: float, target_var: float, loglik=None,
                   horizon: int = VARIANCE_MATCH_HORIZON, seed: int = 0, tol: float = VARIANCE_MATCH_TOL,
                   max_drop: float = VARIANCE_MATCH_MAX_LOGLIK_DROP, rel_step: float = 1e-2) -> VarianceMatch:
    """
    Move theta along the gradient of the simulated mispricing variance (log coordinates)
    until it matches target_var. The mean gap is returned as mean_offset and is added to
    simulated samples before they are compared with data. loglik(theta) gives the per-step
    log-likelihood used for the drop budget.
    """
    if target_var <= 0:
        raise ParameterError("target variance must be > 0")
    names = [n for n in VARIANCE_DIRECTION_PARAMS if getattr(theta, n) > 0]
    sim_mean, sim_var = _simulated_moments(theta, horizon, seed)
    base_loglik = loglik(theta) if loglik else None

    if abs(sim_var / target_var - 1.0) <= tol:
        return VarianceMatch(theta=theta, matched=True, within_budget=True, simulated_var=sim_var,
                             target_var=target_var, loglik_drop=0.0, step=0.0,
                             mean_offset=target_mean - sim_mean)

    x0 = np.log(theta.values(names))
    gradient = np.zeros(len(names))
    for i, _ in enumerate(names):
        e = np.zeros(len(names))
        e[i] = rel_step
        try:
            up = _simulated_moments(theta.with_vector(names, np.exp(x0 + e)), horizon, seed)[1]
            down = _simulated_moments(theta.with_vector(names, np.exp(x0 - e)), horizon, seed)[1]
        except ChiarellaError as err:
            logger.warning(f"variance gradient skipped {names[i]}: {err}")
            continue
        gradient[i] = (math.log(up) - math.log(down)) / (2.0 * rel_step)
    norm = np.linalg.norm(gradient)
    if norm == 0:
        raise ParameterError("simulated variance does not respond to any parameter")
    direction = gradient / norm
    sign = 1.0 if target_var > sim_var else -1.0

    def at(step: float) -> ChiarellaParams:
        return theta.with_vector(names, np.exp(x0 + sign * step * direction))

    def log_var_gap(step: float) -> float:
        return math.log(_simulated_moments(at(step), horizon, seed)[1]) - math.log(target_var)

    def drop(t: ChiarellaParams) -> float:
        if base_loglik is None:
            return 0.0
        return (base_loglik - loglik(t)) / abs(base_loglik)

    upper = 0.1
    while sign * log_var_gap(upper) < 0 and upper < 8.0:
        upper *= 2.0
    if sign * log_var_gap(upper) < 0:
        step = upper
    else:
        step = brentq(log_var_gap, 0.0, upper, xtol=1e-6)

    candidate = at(step)
    loss = drop(candidate)
    within = loss <= max_drop
    if not within:
        # largest step that respects the likelihood budget
        lo, hi = 0.0, step
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if drop(at(mid)) <= max_drop:
                lo = mid
            else:
                hi = mid
        step = lo
        candidate = at(step)
        loss = drop(candidate)
        logger.warning(f"variance match stopped by the likelihood budget at step {step:.4g}")

    new_mean, new_var = _simulated_moments(candidate, horizon, seed)
    return VarianceMatch(
        theta=candidate,
        matched=abs(new_var / target_var - 1.0) <= tol,
        within_budget=within,
        simulated_var=new_var,
        target_var=target_var,
        loglik_drop=loss,
        step=step,
        direction={n: float(d) for n, d in zip(names, direction)},
        mean_offset=target_mean - new_mean,
    )


def bimodality_table(rows: List[BimodalityRow]) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in sorted(rows, key=lambda r: r.asset)],
                        columns=['asset', 'p_filtered', 'p_smoothed', 'verdict_empirical',
                                 'p_numerical', 'verdict_numerical', 'js_distance'])
