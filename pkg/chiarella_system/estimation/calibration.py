"""
Calibration - EM estimation of the Chiarella parameters on de-drifted monthly series,
the three-step class calibration (free fit, excess-volatility ratio, constrained refit)
and Hessian-based standard errors
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from dataclasses_json import dataclass_json
from joblib import Parallel, delayed
from scipy.optimize import minimize_scalar

from ..config import (EM_INIT, EM_MAX_ITER, EM_MONOTONE_SLACK, EM_TOLERANCE, HESSIAN_REL_STEP,
                      HESSIAN_SCALE_FLOOR, INITIAL_VARIANCE_FACTOR, MIN_SERIES_LENGTH, MODELS,
                      SIGMA_FLOOR, SIGMA_RATIO_BOUNDS, SIGMA_RATIO_TOL)
from ..data_sources.preprocessing import CleanSeries, dedrift, fit_drift
from ..errors import (ChiarellaError, EMDivergenceError, EMMonotonicityError, InputDataError,
                      NumericalError, ParameterError)
from ..model.model_core import ChiarellaParams
from .filtering import FilterResult, StateSpaceSpec, run_filter
from .trend_estimation import trend_signal

logger = logging.getLogger(__name__)

HESSIAN_SINGULAR_RTOL = 1e-12
REGRESSORS = {'linear': ('kappa', 'beta'), 'cubic': ('kappa', 'kappa3', 'beta')}
LOWER_BOUNDS = {'linear': {'kappa': 0.0}, 'cubic': {'kappa3': 0.0}}
POSITIVE_SCALES = {'sigma_n': 0.0, 'sigma_v': 0.0}


@dataclass_json
@dataclass(frozen=True)
class FixedParams:
    """Members of theta held fixed during EM; alpha and gamma always are"""
    alpha: float
    gamma: float
    model: str = 'linear'
    gamma_err: float = 0.0
    kappa: Optional[float] = None
    kappa3: Optional[float] = None
    beta: Optional[float] = None
    sigma_v: Optional[float] = None
    sigma_ratio: Optional[float] = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ParameterError(f"unknown model '{self.model}'")
        if self.sigma_ratio is not None and self.sigma_ratio <= 0:
            raise ParameterError("sigma_ratio must be > 0")
        if self.sigma_ratio is not None and self.sigma_v is not None:
            raise ParameterError("sigma_v and sigma_ratio cannot both be fixed")

    def regression_fixed(self) -> Dict[str, float]:
        values = {'kappa': self.kappa, 'kappa3': self.kappa3, 'beta': self.beta}
        return {k: v for k, v in values.items() if v is not None and k in REGRESSORS[self.model]}


@dataclass_json
@dataclass
class CalibrationReport:
    asset_id: str
    model: str
    theta: ChiarellaParams
    loglik: float
    loglik_norm: float
    iterations: int
    history: List[float]
    n_obs: int
    converged: bool = False
    theta_err: Dict[str, Optional[float]] = field(default_factory=dict)
    curvature: Dict[str, float] = field(default_factory=dict)
    sigma_ratio: Optional[float] = None
    degenerate: bool = False
    negative_beta: bool = False
    non_monotone: bool = False
    hessian_singular: bool = False
    initial_variance: Optional[float] = None
    input_hash: Optional[str] = None

    @property
    def sigma_ratio_implied(self) -> Optional[float]:
        return self.theta.sigma_ratio

    def table_row(self) -> Dict:
        t = self.theta
        return {
            'asset': self.asset_id,
            'kappa': t.kappa,
            'kappa3': t.kappa3,
            'beta': t.beta,
            'gamma': t.gamma,
            'sigma_N': t.sigma_n,
            'sigma_V': t.sigma_v,
            'v0': t.v0,
            'loglik_norm': self.loglik_norm,
        }


@dataclass_json
@dataclass
class SigmaSearch:
    sigma_ratio: float
    sigma_ratio_err: float
    loglik: float
    evaluations: int


@dataclass_json
@dataclass
class ClassCalibration:
    asset_class: str
    model: str
    sigma_ratio: float
    sigma_ratio_err: float
    per_asset: Dict[str, CalibrationReport]
    step1: Dict[str, CalibrationReport] = field(default_factory=dict)
    failures: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.sigma_ratio > 0:
            raise ParameterError(f"sigma ratio must be > 0, got {self.sigma_ratio}")

    def to_table(self) -> pd.DataFrame:
        rows = [self.per_asset[k].table_row() for k in sorted(self.per_asset)]
        return pd.DataFrame(rows, columns=['asset', 'kappa', 'kappa3', 'beta', 'gamma',
                                           'sigma_N', 'sigma_V', 'v0', 'loglik_norm'])


@dataclass
class StdErrorResult:
    errors: Dict[str, Optional[float]]
    curvature: Dict[str, float]
    singular: bool
    hessian: np.ndarray
    names: Tuple[str, ...]


def _gaussian_moments(mu: np.ndarray, s: np.ndarray) -> Dict[int, np.ndarray]:
    """Raw moments E[x^k], k = 1..6, of x ~ N(mu, s)"""
    mu2 = mu * mu
    return {
        1: mu,
        2: mu2 + s,
        3: mu * mu2 + 3.0 * mu * s,
        4: mu2 * mu2 + 6.0 * mu2 * s + 3.0 * s * s,
        5: mu2 * mu2 * mu + 10.0 * mu2 * mu * s + 15.0 * mu * s * s,
        6: mu2 * mu2 * mu2 + 15.0 * mu2 * mu2 * s + 45.0 * mu2 * s * s + 15.0 * s ** 3,
    }


@dataclass
class _Sufficient:
    names: Tuple[str, ...]
    A: np.ndarray
    b: np.ndarray
    dd: float
    sv: float
    n: int
    v0: float


def _expected_statistics(result: FilterResult, p: np.ndarray, u: np.ndarray, model: str) -> _Sufficient:
    """Expected normal equations of d = kappa x + kappa3 x^3 + beta u under the smoothed posterior"""
    mu = result.v_smooth[:-1] - p[:-1]
    s = result.var_smooth[:-1]
    d = np.diff(p)
    E = _gaussian_moments(mu, s)
    names = REGRESSORS[model]
    # feature -> power of x (0 for the trend control u)
    power = {'kappa': 1, 'kappa3': 3, 'beta': 0}

    def cross(i: str, j: str) -> float:
        pi, pj = power[i], power[j]
        if pi == 0 and pj == 0:
            return float(np.sum(u * u))
        if pi == 0 or pj == 0:
            return float(np.sum(u * E[pi + pj]))
        return float(np.sum(E[pi + pj]))

    A = np.array([[cross(i, j) for j in names] for i in names])
    b = np.array([float(np.sum(d * (u if power[i] == 0 else E[power[i]]))) for i in names])

    vs, Ps, lag = result.v_smooth, result.var_smooth, result.lag_cov
    sv = float(np.sum(np.diff(vs) ** 2 + Ps[1:] + Ps[:-1] - 2.0 * lag))
    return _Sufficient(names=names, A=A, b=b, dd=float(np.sum(d * d)), sv=sv, n=len(d), v0=float(vs[0]))


def _solve_regression(stats: _Sufficient, fixed: Mapping[str, float], bounds: Mapping[str, float]) -> Dict[str, float]:
    """Maximize the expected quadratic over the free coefficients, clamping violated lower bounds"""
    names = list(stats.names)
    pinned = dict(fixed)
    while True:
        free = [n for n in names if n not in pinned]
        coef = dict(pinned)
        if free:
            fi = [names.index(n) for n in free]
            pi = [names.index(n) for n in pinned]
            rhs = stats.b[fi] - (stats.A[np.ix_(fi, pi)] @ np.array([pinned[n] for n in pinned]) if pi else 0.0)
            A_ff = stats.A[np.ix_(fi, fi)]
            try:
                sol = np.linalg.solve(A_ff, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(A_ff, rhs, rcond=None)[0]
            coef.update({n: float(x) for n, x in zip(free, sol)})
        violated = [n for n in free if n in bounds and coef[n] < bounds[n]]
        if not violated:
            return coef
        pinned[violated[0]] = bounds[violated[0]]


def _expected_ssr(stats: _Sufficient, coef: Mapping[str, float]) -> float:
    theta = np.array([coef[n] for n in stats.names])
    return max(stats.dd - 2.0 * theta @ stats.b + theta @ stats.A @ theta, 0.0)


def _m_step(result: FilterResult, p: np.ndarray, u: np.ndarray, theta: ChiarellaParams,
            fixed: FixedParams) -> Tuple[ChiarellaParams, bool]:
    stats = _expected_statistics(result, p, u, fixed.model)
    coef = _solve_regression(stats, fixed.regression_fixed(), LOWER_BOUNDS[fixed.model])
    if fixed.model == 'cubic' and coef['kappa3'] <= 0.0 and coef['kappa'] < 0.0:
        # kappa3 at its bound turns the model linear, where kappa must stay >= 0
        coef = _solve_regression(stats, fixed.regression_fixed(), {'kappa3': 0.0, 'kappa': 0.0})
    ssr = _expected_ssr(stats, coef)

    if fixed.sigma_ratio is not None:
        ratio = fixed.sigma_ratio
        var_n = (ssr + ratio * ratio * stats.sv) / (2 * stats.n)
        sigma_n = math.sqrt(max(var_n, 0.0))
        sigma_v = sigma_n / ratio
    else:
        sigma_n = math.sqrt(ssr / stats.n)
        sigma_v = fixed.sigma_v if fixed.sigma_v is not None else math.sqrt(max(stats.sv, 0.0) / stats.n)

    floored = sigma_n < SIGMA_FLOOR
    if floored:
        sigma_n = SIGMA_FLOOR
        if fixed.sigma_ratio is not None:
            sigma_v = sigma_n / fixed.sigma_ratio
    if fixed.sigma_v is None and fixed.sigma_ratio is None:
        sigma_v = max(sigma_v, SIGMA_FLOOR)

    values = dict(kappa=coef.get('kappa', 0.0), kappa3=coef.get('kappa3', 0.0), beta=coef['beta'],
                  sigma_n=sigma_n, sigma_v=sigma_v, v0=stats.v0)
    if not all(math.isfinite(x) for x in values.values()):
        raise EMDivergenceError(f"non-finite parameter update: {values}")
    return theta.with_values(**values), floored


def initial_theta(dedrifted: np.ndarray, fixed: FixedParams) -> ChiarellaParams:
    sigma_n = max(float(np.std(np.diff(dedrifted))), SIGMA_FLOOR)
    if fixed.sigma_ratio is not None:
        sigma_v = sigma_n / fixed.sigma_ratio
    elif fixed.sigma_v is not None:
        sigma_v = fixed.sigma_v
    else:
        sigma_v = sigma_n / EM_INIT['sigma_ratio']
    cubic = fixed.model == 'cubic'
    return ChiarellaParams(
        kappa=fixed.kappa if fixed.kappa is not None else EM_INIT['kappa'],
        kappa3=(fixed.kappa3 if fixed.kappa3 is not None else EM_INIT['kappa3']) if cubic else 0.0,
        beta=fixed.beta if fixed.beta is not None else EM_INIT['beta'],
        gamma=fixed.gamma,
        alpha=fixed.alpha,
        sigma_n=sigma_n,
        sigma_v=sigma_v,
        v0=float(dedrifted[0]),
    )


def _series_values(series: Union[CleanSeries, np.ndarray], asset_id: Optional[str]) -> Tuple[str, np.ndarray]:
    if isinstance(series, CleanSeries):
        return asset_id or series.id, np.asarray(series.dedrifted, dtype=float)
    return asset_id or 'series', np.asarray(series, dtype=float)


def em_fit(series: Union[CleanSeries, np.ndarray], fixed: FixedParams, tol: float = EM_TOLERANCE,
           max_iter: int = EM_MAX_ITER, asset_id: Optional[str] = None,
           init: Optional[ChiarellaParams] = None, compute_errors: bool = True) -> CalibrationReport:
    """
    Expectation-maximization with a smoother E-step and closed-form M-step.
    Stops once the gain in total log-likelihood drops below tol.
    """
    asset_id, p = _series_values(series, asset_id)
    if len(p) < MIN_SERIES_LENGTH:
        raise InputDataError(f"{asset_id}: {len(p)} months, EM needs at least {MIN_SERIES_LENGTH}")
    if not np.all(np.isfinite(p)):
        raise InputDataError(f"{asset_id}: non-finite observations")

    theta = init or initial_theta(p, fixed)
    P0 = (INITIAL_VARIANCE_FACTOR * (theta.sigma_v if theta.sigma_v > 0 else theta.sigma_n)) ** 2
    u = np.tanh(fixed.gamma * trend_signal(p, fixed.alpha))[:-1]

    if np.std(np.diff(p)) < SIGMA_FLOOR:
        logger.warning(f"{asset_id}: price series is constant, returning degenerate fit")
        theta = theta.with_values(sigma_n=SIGMA_FLOOR, sigma_v=SIGMA_FLOOR / EM_INIT['sigma_ratio'])
        result = run_filter(StateSpaceSpec(theta, p, P0), smooth=False)
        return CalibrationReport(asset_id=asset_id, model=fixed.model, theta=theta, loglik=result.loglik,
                                 loglik_norm=result.loglik_per_step, iterations=0,
                                 history=[result.loglik_per_step], n_obs=len(p) - 1,
                                 sigma_ratio=fixed.sigma_ratio, degenerate=True,
                                 initial_variance=P0)

    result = run_filter(StateSpaceSpec(theta, p, P0))
    history = [result.loglik_per_step]
    degenerate = converged = non_monotone = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        candidate, floored = _m_step(result, p, u, theta, fixed)
        new_result = run_filter(StateSpaceSpec(candidate, p, P0))
        gain = new_result.loglik - result.loglik
        if gain < -EM_MONOTONE_SLACK * max(1.0, abs(result.loglik)):
            if fixed.model == 'linear':
                raise EMMonotonicityError(iteration, history[-1], new_result.loglik_per_step)
            # the unscented E-step is approximate; keep the last accepted iterate
            logger.warning(f"{asset_id}: likelihood decreased at iteration {iteration}, stopping")
            non_monotone = True
            break
        theta, result = candidate, new_result
        degenerate = degenerate or floored
        history.append(result.loglik_per_step)
        logger.info(f"stage=em asset={asset_id} iter={iteration} loglik={result.loglik_per_step:.10f}")
        if gain < tol:
            converged = True
            break
    else:
        logger.warning(f"{asset_id}: EM hit the iteration cap ({max_iter}) without converging")

    report = CalibrationReport(
        asset_id=asset_id,
        model=fixed.model,
        theta=theta,
        loglik=result.loglik,
        loglik_norm=result.loglik_per_step,
        iterations=iteration,
        history=history,
        n_obs=len(p) - 1,
        converged=converged,
        sigma_ratio=fixed.sigma_ratio,
        degenerate=degenerate,
        negative_beta=theta.beta < 0,
        non_monotone=non_monotone,
        initial_variance=P0,
    )
    if report.negative_beta:
        logger.warning(f"{asset_id}: calibrated beta is negative ({theta.beta:.4f})")

    if compute_errors:
        se = std_errors(theta, p, fixed, initial_variance=P0)
        report.theta_err = dict(se.errors)
        report.theta_err['gamma'] = fixed.gamma_err
        report.curvature = se.curvature
        report.hessian_singular = se.singular
    logger.info(f"{asset_id}: EM done after {iteration} iterations, L={report.loglik_norm:.6f}")
    return report


def free_parameters(fixed: FixedParams) -> Tuple[str, ...]:
    names = [n for n in REGRESSORS[fixed.model] if n not in fixed.regression_fixed()]
    names.append('sigma_n')
    if fixed.sigma_v is None and fixed.sigma_ratio is None:
        names.append('sigma_v')
    names.append('v0')
    return tuple(names)


def _loglik_function(p: np.ndarray, theta: ChiarellaParams, fixed: FixedParams, names: Sequence[str],
                     initial_variance: Optional[float]) -> Callable[[np.ndarray], float]:
    def loglik(x: np.ndarray) -> float:
        changes = dict(zip(names, x))
        if fixed.sigma_ratio is not None and 'sigma_n' in changes:
            changes['sigma_v'] = changes['sigma_n'] / fixed.sigma_ratio
        candidate = theta.with_values(**{k: float(v) for k, v in changes.items()})
        return run_filter(StateSpaceSpec(candidate, p, initial_variance), smooth=False).loglik
    return loglik


def numerical_hessian(f: Callable[[np.ndarray], float], x0: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Central-difference Hessian"""
    n = len(x0)
    H = np.zeros((n, n))
    f0 = f(x0)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = steps[i]
        H[i, i] = (f(x0 + ei) - 2.0 * f0 + f(x0 - ei)) / steps[i] ** 2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = steps[j]
            H[i, j] = H[j, i] = (f(x0 + ei + ej) - f(x0 + ei - ej) - f(x0 - ei + ej)
                                 + f(x0 - ei - ej)) / (4.0 * steps[i] * steps[j])
    return H


def std_errors(theta: ChiarellaParams, series: Union[CleanSeries, np.ndarray], fixed: FixedParams,
               initial_variance: Optional[float] = None) -> StdErrorResult:
    """Errors from the inverse negative Hessian of the total log-likelihood at theta"""
    _, p = _series_values(series, None)
    names = free_parameters(fixed)
    x0 = theta.values(names)
    steps = HESSIAN_REL_STEP * np.maximum(np.abs(x0), HESSIAN_SCALE_FLOOR)
    bounds = {**LOWER_BOUNDS[fixed.model], **POSITIVE_SCALES}
    lower = np.array([bounds.get(n, -np.inf) for n in names])
    # one-sided stencil for parameters sitting on their bound
    at_bound = x0 - steps <= lower
    if np.any(at_bound):
        logger.info(f"Hessian uses one-sided differences for {[n for n, b in zip(names, at_bound) if b]}")
    center = np.where(at_bound, x0 + steps, x0)
    try:
        H = numerical_hessian(_loglik_function(p, theta, fixed, names, initial_variance), center, steps)
    except ChiarellaError as e:
        logger.warning(f"Hessian evaluation left the admissible region: {e}")
        nan = np.full((len(names), len(names)), np.nan)
        return StdErrorResult(errors={n: None for n in names}, curvature={}, singular=True,
                              hessian=nan, names=names)

    neg = -0.5 * (H + H.T)
    curvature = {n: float(neg[i, i]) for i, n in enumerate(names)}
    eig = np.linalg.eigvalsh(neg)
    singular = bool(not np.all(np.isfinite(eig)) or eig[0] <= HESSIAN_SINGULAR_RTOL * max(eig[-1], 0.0)
                    or eig[-1] <= 0)
    if singular:
        logger.warning(f"Hessian is not invertible; reporting per-parameter curvature for {list(names)}")
        errors = {n: (1.0 / math.sqrt(c) if c > 0 else None) for n, c in curvature.items()}
    else:
        cov = np.linalg.inv(neg)
        errors = {n: float(math.sqrt(max(cov[i, i], 0.0))) for i, n in enumerate(names)}
    return StdErrorResult(errors=errors, curvature=curvature, singular=singular, hessian=H, names=names)


def sigma_v_error(sigma_n: float, delta_sigma_n: float, sigma_ratio: float, delta_sigma_ratio: float) -> float:
    """Gaussian error propagation for sigma_V = sigma_N / Sigma"""
    return math.sqrt((sigma_n / sigma_ratio ** 2 * delta_sigma_ratio) ** 2 + (delta_sigma_n / sigma_ratio) ** 2)


def calibrate_class_sigma(reports: Mapping[str, CalibrationReport], series: Mapping[str, Union[CleanSeries, np.ndarray]],
                          asset_class: str = 'class', bounds: Tuple[float, float] = SIGMA_RATIO_BOUNDS,
                          tol: float = SIGMA_RATIO_TOL) -> SigmaSearch:
    """
    Excess-volatility ratio maximizing the summed class log-likelihood, each asset
    re-filtered with sigma_V = sigma_N / Sigma and its other step-one parameters
    """
    ids = sorted(reports)
    if len(ids) < 2:
        raise InputDataError(f"class {asset_class}: the ratio search needs at least 2 assets, got {len(ids)}")
    missing = [i for i in ids if i not in series]
    if missing:
        raise InputDataError(f"class {asset_class}: no series for {missing}")
    data = {i: _series_values(series[i], i)[1] for i in ids}

    evaluations = []

    def negative_loglik(log_ratio: float) -> float:
        ratio = math.exp(log_ratio)
        total = 0.0
        for i in ids:
            theta = reports[i].theta
            theta = theta.with_values(sigma_v=theta.sigma_n / ratio)
            total += run_filter(StateSpaceSpec(theta, data[i], reports[i].initial_variance), smooth=False).loglik
        evaluations.append(total)
        logger.info(f"stage=sigma class={asset_class} sigma={ratio:.6f} loglik={total:.6f}")
        return -total

    lo, hi = bounds
    result = minimize_scalar(negative_loglik, bounds=(math.log(lo), math.log(hi)), method='bounded',
                             options={'xatol': tol})
    ratio = float(math.exp(result.x))
    implied = [reports[i].theta.sigma_ratio for i in ids if reports[i].theta.sigma_ratio is not None]
    spread = float(np.std(implied)) if implied else 0.0
    logger.info(f"class {asset_class}: Sigma={ratio:.4f} (+/- {spread:.4f} across assets)")
    return SigmaSearch(sigma_ratio=ratio, sigma_ratio_err=spread, loglik=float(-result.fun),
                       evaluations=len(evaluations))


def _safe_fit(asset_id: str, series, fixed: FixedParams, tol: float, max_iter: int):
    """Worker entry point; failures come back as text so they survive process boundaries"""
    try:
        return asset_id, em_fit(series, fixed, tol=tol, max_iter=max_iter, asset_id=asset_id), None
    except (ChiarellaError, np.linalg.LinAlgError) as e:
        return asset_id, None, f"{type(e).__name__}: {e}"


def fit_assets(series: Mapping[str, Union[CleanSeries, np.ndarray]], fixed: Mapping[str, FixedParams],
               tol: float = EM_TOLERANCE, max_iter: int = EM_MAX_ITER,
               workers: int = 1) -> Tuple[Dict[str, CalibrationReport], Dict[str, str]]:
    ids = sorted(series)
    outcomes = Parallel(n_jobs=workers)(
        delayed(_safe_fit)(i, series[i], fixed[i], tol, max_iter) for i in ids
    )
    reports, failures = {}, {}
    for asset_id, report, error in outcomes:
        if error is None:
            reports[asset_id] = report
        else:
            logger.error(f"EM failed for {asset_id}: {error}")
            failures[asset_id] = error
    return reports, failures


def three_step_calibrate(asset_class: str, series: Mapping[str, Union[CleanSeries, np.ndarray]],
                         trend: Mapping[str, Tuple[float, float, float]], model: str = 'linear',
                         tol: float = EM_TOLERANCE, max_iter: int = EM_MAX_ITER,
                         workers: int = 1) -> ClassCalibration:
    """
    1. free linear fit per asset
    2. class ratio Sigma from the summed likelihood
    3. refit of the requested model with sigma_V = sigma_N / Sigma

    trend maps asset id -> (alpha, gamma, gamma_err).
    """
    if model not in MODELS:
        raise ParameterError(f"unknown model '{model}'")

    def fixed_for(asset_id: str, **extra) -> FixedParams:
        alpha, gamma, gamma_err = trend[asset_id]
        return FixedParams(alpha=alpha, gamma=gamma, gamma_err=gamma_err, **extra)

    logger.info(f"class {asset_class}: step 1, free linear fits for {len(series)} assets")
    step1, failures = fit_assets(series, {i: fixed_for(i) for i in series}, tol, max_iter, workers)

    search = calibrate_class_sigma(step1, {i: series[i] for i in step1}, asset_class=asset_class)

    logger.info(f"class {asset_class}: step 3, {model} refit at Sigma={search.sigma_ratio:.4f}")
    refit_ids = sorted(step1)
    step3, more = fit_assets({i: series[i] for i in refit_ids},
                             {i: fixed_for(i, model=model, sigma_ratio=search.sigma_ratio) for i in refit_ids},
                             tol, max_iter, workers)
    failures.update(more)

    for report in step3.values():
        dn = report.theta_err.get('sigma_n')
        if dn is not None:
            report.theta_err['sigma_v'] = sigma_v_error(report.theta.sigma_n, dn, search.sigma_ratio,
                                                        search.sigma_ratio_err)

    return ClassCalibration(asset_class=asset_class, model=model, sigma_ratio=search.sigma_ratio,
                            sigma_ratio_err=search.sigma_ratio_err, per_asset=step3, step1=step1,
                            failures=failures)


def drift_order_robustness(series: CleanSeries, years: int, fixed: FixedParams, offsets: Sequence[int] = (-8, 0, 8),
                           tol: float = EM_TOLERANCE, max_iter: int = EM_MAX_ITER) -> Dict[int, CalibrationReport]:
    """Refit with the drift polynomial order shifted around its default"""
    base = series.drift.order
    reports = {}
    for offset in offsets:
        order = base + offset
        if order < 0:
            logger.warning(f"{series.id}: skipping negative drift order {order}")
            continue
        drift = fit_drift(series.logp, years, order=order)
        try:
            reports[order] = em_fit(dedrift(series.logp, drift), fixed, tol=tol, max_iter=max_iter,
                                    asset_id=f"{series.id}@k={order}", compute_errors=False)
        except NumericalError as e:
            logger.error(f"{series.id}: refit at drift order {order} failed: {e}")
    return reports


def relative_spread(reports: Mapping[int, CalibrationReport], names: Sequence[str] = ('kappa', 'beta', 'sigma_n')) -> Dict[str, float]:
    """Largest relative deviation of each parameter from the default-order fit"""
    orders = sorted(reports)
    if not orders:
        return {}
    reference = reports[orders[len(orders) // 2]].theta
    spread = {}
    for name in names:
        ref = getattr(reference, name)
        values = np.array([getattr(reports[o].theta, name) for o in orders])
        spread[name] = float(np.max(np.abs(values - ref)) / abs(ref)) if ref != 0 else float('inf')
    return spread
