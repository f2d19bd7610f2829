"""
Trend Estimation - ex-ante estimation of the EWMA decay alpha (Sharpe-maximizing
trend signal) and of the tanh saturation gamma, both fixed before EM
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from dataclasses_json import dataclass_json
from scipy.optimize import least_squares
from scipy.signal import lfilter
from sklearn.linear_model import LinearRegression

from ..config import ALPHA_GRID, ROLLING_WINDOW, TANH_MIN_POINTS, TANH_START_GAMMAS
from ..errors import FitConvergenceError, InputDataError, ParameterError, UndefinedSharpeError

logger = logging.getLogger(__name__)


@dataclass_json
@dataclass(frozen=True)
class TrendFit:
    alpha: float
    a: float
    b: float
    c: float
    gamma_tilde: float
    gamma: float
    var_m: float
    gamma_err: float = 0.0
    sharpe_curve: Dict[float, float] = field(default_factory=dict)
    fit_errors: Dict[str, float] = field(default_factory=dict)
    residual: float = 0.0
    linear_residual: float = 0.0
    sharpe_flat: bool = False

    def for_asset(self, var_m: float) -> 'TrendFit':
        """Same class-level tanh, gamma rescaled with one asset's Var[m]"""
        scale = np.sqrt(var_m)
        return replace(self, var_m=float(var_m), gamma=self.gamma_tilde / scale,
                       gamma_err=self.fit_errors.get('gamma_tilde', 0.0) / scale)


@dataclass
class ClassTrendFit:
    asset_class: str
    fit: TrendFit
    var_m: Dict[str, float]

    def asset_fit(self, asset_id: str) -> TrendFit:
        return self.fit.for_asset(self.var_m[asset_id])


def returns_from_prices(dedrifted: Sequence[float]) -> np.ndarray:
    """r[t] = p[t] - p[t-1] with r[0] = 0"""
    p = np.asarray(dedrifted, dtype=float)
    r = np.zeros_like(p)
    r[1:] = np.diff(p)
    return r


def ewma_trend(returns: Sequence[float], alpha: float) -> np.ndarray:
    """m[0] = 0, m[t] = (1 - alpha) m[t-1] + alpha r[t-1]"""
    if not 0.0 < alpha <= 1.0:
        raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
    r = np.asarray(returns, dtype=float)
    m = np.zeros_like(r)
    if len(r) > 1:
        m[1:] = lfilter([alpha], [1.0, alpha - 1.0], r[:-1])
    return m


def trend_signal(dedrifted: Sequence[float], alpha: float) -> np.ndarray:
    return ewma_trend(returns_from_prices(dedrifted), alpha)


def sharpe_ratio(excess_returns: Sequence[float]) -> float:
    x = np.asarray(excess_returns, dtype=float)
    if len(x) < 2:
        raise ParameterError("Sharpe ratio needs at least two returns")
    sd = np.std(x)
    if sd <= 1e-15 * max(1.0, np.abs(x).max()):
        raise UndefinedSharpeError("zero-variance returns: Sharpe ratio undefined")
    return float(np.mean(x) / sd)


def _strategy_returns(dedrifted: np.ndarray, alpha: float) -> np.ndarray:
    r = returns_from_prices(dedrifted)
    m = ewma_trend(r, alpha)
    return np.sign(m[:-1]) * r[1:]


def _ordered(series_set) -> List[np.ndarray]:
    if isinstance(series_set, Mapping):
        return [np.asarray(series_set[k], dtype=float) for k in sorted(series_set)]
    return [np.asarray(s, dtype=float) for s in series_set]


def alpha_sharpe_curve(series_set, grid: Sequence[float] = ALPHA_GRID) -> Dict[float, float]:
    """Pooled Sharpe ratio of the sign(m) strategy for each decay in the grid"""
    series = _ordered(series_set)
    if not series:
        raise InputDataError("alpha estimation needs at least one series")
    curve = {}
    for alpha in grid:
        pooled = np.concatenate([_strategy_returns(s, alpha) for s in series])
        try:
            curve[float(alpha)] = sharpe_ratio(pooled)
        except UndefinedSharpeError:
            curve[float(alpha)] = 0.0
    return curve


def estimate_alpha(series_set, grid: Sequence[float] = ALPHA_GRID) -> float:
    """Sharpe-maximizing decay; ties resolve to the smaller alpha"""
    curve = alpha_sharpe_curve(series_set, grid)
    best = max(sorted(curve), key=lambda a: curve[a])
    logger.info(f"Trend decay: alpha={best:.4f} (1/{1.0 / best:.1f}), SR={curve[best]:.4f}")
    return best


def is_flat_curve(curve: Mapping[float, float], n_obs: int) -> bool:
    """Sharpe differences below the Monte-Carlo noise of a Sharpe estimate, ~2/sqrt(n)"""
    values = np.array(list(curve.values()))
    return bool(values.max() - values.min() < 2.0 / np.sqrt(max(n_obs, 1)))


def normalize(x: Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    sd = np.std(x)
    if sd <= 0:
        raise InputDataError("cannot normalize a constant sequence")
    return x / sd


def _tanh_residuals(theta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    a, b, g, c = theta
    return a + b * np.tanh(g * x + c) - y


def fit_tanh(trend_norm: Sequence[float], fwd_returns_norm: Sequence[float], var_m: float = 1.0,
             alpha: float = 0.0, start_gammas: Sequence[float] = TANH_START_GAMMAS) -> TrendFit:
    """
    Multi-start Levenberg-Marquardt fit of h(x) = a + b tanh(gamma_tilde x + c);
    gamma = gamma_tilde / sqrt(var_m)
    """
    x = np.asarray(trend_norm, dtype=float)
    y = np.asarray(fwd_returns_norm, dtype=float)
    if len(x) != len(y):
        raise InputDataError("trend and return samples must have equal length")
    if len(x) < TANH_MIN_POINTS:
        raise InputDataError(f"tanh fit needs at least {TANH_MIN_POINTS} points, got {len(x)}")
    if var_m <= 0:
        raise ParameterError(f"Var[m] must be positive, got {var_m}")

    baseline = LinearRegression().fit(x.reshape(-1, 1), y)
    linear_residual = float(np.sum((baseline.predict(x.reshape(-1, 1)) - y) ** 2))
    slope, intercept = float(baseline.coef_[0]), float(baseline.intercept_)

    best = stalled = None
    best_cost = stalled_cost = np.inf
    for g0 in start_gammas:
        start = np.array([intercept, slope / g0 if slope != 0 else 0.01, g0, 0.0])
        try:
            result = least_squares(_tanh_residuals, start, args=(x, y), method='lm')
        except (ValueError, np.linalg.LinAlgError) as e:
            logger.warning(f"tanh fit from gamma_tilde={g0} failed: {e}")
            continue
        if not np.all(np.isfinite(result.x)):
            continue
        if result.status > 0 and 2 * result.cost < best_cost:
            best, best_cost = result, 2 * result.cost
        elif result.status == 0 and 2 * result.cost < stalled_cost:
            stalled, stalled_cost = result, 2 * result.cost

    if best is None and stalled is None:
        raise FitConvergenceError("tanh fit did not converge from any start", best_residual=best_cost)
    if best is None:
        # evaluation budget exhausted: typical of a near-linear response (b -> inf, gamma -> 0)
        logger.warning("tanh fit hit the evaluation limit; gamma_tilde is weakly identified")
        best, best_cost = stalled, stalled_cost

    a, b, g, c = best.x
    jac = best.jac
    if g < 0:
        # h is invariant under (b, gamma, c) -> (-b, -gamma, -c)
        b, g, c = -b, -g, -c
        jac = jac * np.array([1.0, -1.0, -1.0, -1.0])
    dof = max(len(x) - 4, 1)
    cov = np.linalg.pinv(jac.T @ jac) * (best_cost / dof)
    errors = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    fit = TrendFit(
        alpha=float(alpha),
        a=float(a), b=float(b), c=float(c),
        gamma_tilde=float(g),
        gamma=float(g / np.sqrt(var_m)),
        var_m=float(var_m),
        gamma_err=float(errors[2] / np.sqrt(var_m)),
        fit_errors={name: float(e) for name, e in zip(('a', 'b', 'gamma_tilde', 'c'), errors)},
        residual=float(best_cost),
        linear_residual=linear_residual,
    )
    logger.info(f"tanh fit: gamma_tilde={fit.gamma_tilde:.4f} +/- {errors[2]:.4f}, "
                f"residual={fit.residual:.4f} (linear {linear_residual:.4f})")
    return fit


def rolling_average_curve(trend_norm: Sequence[float], fwd_returns_norm: Sequence[float],
                          window: int = ROLLING_WINDOW) -> pd.DataFrame:
    """Forward returns averaged over consecutive points ordered by trend signal"""
    frame = pd.DataFrame({'m_norm': trend_norm, 'ret_norm': fwd_returns_norm}).sort_values('m_norm', kind='mergesort')
    window = min(window, len(frame))
    frame['ret_norm_rollavg'] = frame['ret_norm'].rolling(window, center=True).mean()
    frame['m_norm'] = frame['m_norm'].rolling(window, center=True).mean()
    return frame.dropna()[['m_norm', 'ret_norm_rollavg']].reset_index(drop=True)


def trend_pairs(dedrifted: Sequence[float], alpha: float):
    """(m[t], p[t+1] - p[t]) pairs of one series plus Var[m]"""
    p = np.asarray(dedrifted, dtype=float)
    m = trend_signal(p, alpha)
    return m[:-1], np.diff(p), float(np.var(m))


def estimate_class_trend(asset_class: str, series_set: Mapping[str, Sequence[float]],
                         grid: Sequence[float] = ALPHA_GRID, alpha: Optional[float] = None) -> ClassTrendFit:
    """Shared alpha and gamma_tilde for a class; gamma per asset through its own Var[m]"""
    if not series_set:
        raise InputDataError(f"class {asset_class} has no series")
    curve = alpha_sharpe_curve(series_set, grid)
    if alpha is None:
        alpha = max(sorted(curve), key=lambda a: curve[a])
    n_obs = sum(len(s) - 1 for s in series_set.values())
    flat = is_flat_curve(curve, n_obs)
    if flat:
        logger.warning(f"class {asset_class}: Sharpe curve over alpha is flat within noise")

    xs, ys, var_m = [], [], {}
    for asset_id in sorted(series_set):
        m, fwd, v = trend_pairs(series_set[asset_id], alpha)
        xs.append(normalize(m))
        ys.append(normalize(fwd))
        var_m[asset_id] = v

    fit = fit_tanh(np.concatenate(xs), np.concatenate(ys), var_m=1.0, alpha=alpha)
    fit = replace(fit, sharpe_curve=curve, sharpe_flat=flat)
    logger.info(f"class {asset_class}: alpha={alpha:.4f}, gamma_tilde={fit.gamma_tilde:.4f}")
    return ClassTrendFit(asset_class=asset_class, fit=fit, var_m=var_m)
