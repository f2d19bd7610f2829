"""
Backtest - trend and value signals from the calibrated model, traded on real prices

Trend: beta*tanh(gamma*m), normalized by its lagged EWMA std and clipped at +/-1.
Value: kappa*d + kappa3*d^3 with d = filtered value - price, left unnormalized.
PnL_t = s_{t-1} * (P_t - P_{t-1}) / sigma^P_{t-1}.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import pandas as pd

from ..config import BACKTEST_EWMA_DECAY, BACKTEST_SPLIT_DATE, BACKTEST_WARMUP_MONTHS
from ..data_sources.preprocessing import CleanSeries
from ..errors import InputDataError, UndefinedSharpeError
from ..estimation.filtering import FilterResult
from ..estimation.trend_estimation import sharpe_ratio, trend_signal
from ..model.model_core import ChiarellaParams

logger = logging.getLogger(__name__)


@dataclass
class BacktestResult:
    asset_id: str
    dates: pd.DatetimeIndex
    pnl_trend: np.ndarray
    pnl_value: np.ndarray
    sr_trend: Dict[str, Optional[float]] = field(default_factory=dict)
    sr_value: Dict[str, Optional[float]] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'date': self.dates.strftime('%Y-%m-%d'),
            'pnl_trend': self.pnl_trend,
            'pnl_value': self.pnl_value,
        })

    def summary(self) -> Dict:
        return {
            'asset': self.asset_id,
            'period': [self.dates[0].strftime('%Y-%m-%d'), self.dates[-1].strftime('%Y-%m-%d')]
            if len(self.dates) else [],
            'sr_trend': self.sr_trend,
            'sr_value': self.sr_value,
        }


def ewma_std(x: pd.Series, decay: float = BACKTEST_EWMA_DECAY) -> pd.Series:
    return x.ewm(alpha=decay).std()


def normalized_trend(raw: pd.Series, decay: float = BACKTEST_EWMA_DECAY) -> pd.Series:
    """Trend signal over its lagged EWMA std, clipped at one std"""
    scale = ewma_std(raw, decay).shift(1)
    return (raw / scale).clip(-1.0, 1.0)


def signal_pnl(signal: pd.Series, prices: pd.Series, decay: float = BACKTEST_EWMA_DECAY,
               warmup: int = BACKTEST_WARMUP_MONTHS) -> pd.Series:
    """PnL of holding s_{t-1} over (t-1, t], in units of the lagged EWMA price-change std"""
    changes = prices.diff()
    sigma = ewma_std(changes, decay).shift(1)
    pnl = signal.shift(1) * changes / sigma
    return pnl.iloc[warmup:].replace([np.inf, -np.inf], np.nan).dropna()


def _period_sharpe(pnl: pd.Series, split: pd.Timestamp, label: str) -> Dict[str, Optional[float]]:
    periods = {
        'full': pnl,
        f'before {split:%Y-%m-%d}': pnl[pnl.index < split],
        f'from {split:%Y-%m-%d}': pnl[pnl.index >= split],
    }
    out = {}
    for name, values in periods.items():
        try:
            out[name] = sharpe_ratio(values.to_numpy()) if len(values) >= 2 else None
        except UndefinedSharpeError:
            logger.warning(f"{label}: Sharpe ratio undefined for period '{name}' (zero variance)")
            out[name] = None
    return out


def build_signals(theta: ChiarellaParams, series: CleanSeries, result: FilterResult,
                  decay: float = BACKTEST_EWMA_DECAY) -> pd.DataFrame:
    """Both signals at each date, computed from information available at that date"""
    if len(result.v_pred) != len(series):
        raise InputDataError(f"{series.id}: filter output does not match the series length")
    p = series.dedrifted
    m = trend_signal(p, theta.alpha)
    trend_raw = pd.Series(theta.beta * np.tanh(theta.gamma * m), index=series.dates)
    # one-step-ahead filtered value: uses prices up to t only
    gap = result.v_pred - p
    value = pd.Series(theta.kappa * gap + theta.kappa3 * gap ** 3, index=series.dates)
    return pd.DataFrame({'trend': normalized_trend(trend_raw, decay), 'value': value})


def backtest_signals(theta: ChiarellaParams, series: CleanSeries, result: FilterResult,
                     split_date: str = BACKTEST_SPLIT_DATE, decay: float = BACKTEST_EWMA_DECAY,
                     warmup: int = BACKTEST_WARMUP_MONTHS) -> BacktestResult:
    signals = build_signals(theta, series, result, decay)
    prices = pd.Series(series.prices, index=series.dates)
    pnl_trend = signal_pnl(signals['trend'], prices, decay, warmup)
    pnl_value = signal_pnl(signals['value'], prices, decay, warmup)
    common = pnl_trend.index.intersection(pnl_value.index)
    pnl_trend, pnl_value = pnl_trend.loc[common], pnl_value.loc[common]

    split = pd.Timestamp(split_date)
    outcome = BacktestResult(
        asset_id=series.id,
        dates=pd.DatetimeIndex(common),
        pnl_trend=pnl_trend.to_numpy(),
        pnl_value=pnl_value.to_numpy(),
        sr_trend=_period_sharpe(pnl_trend, split, f"{series.id} trend"),
        sr_value=_period_sharpe(pnl_value, split, f"{series.id} value"),
    )
    logger.info(f"{series.id}: backtest over {len(common)} months, "
                f"SR trend={outcome.sr_trend['full']}, SR value={outcome.sr_value['full']}")
    return outcome
