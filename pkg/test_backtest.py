#!/usr/bin/env python3
"""
Tests for the trend and value signal backtest
"""
import numpy as np
import pandas as pd
import pytest

from chiarella_system.analysis.backtest import (backtest_signals, build_signals, normalized_trend,
                                                signal_pnl)
from chiarella_system.data_sources.preprocessing import preprocess_series
from chiarella_system.data_sources.price_series_loader import RawSeries
from chiarella_system.errors import InputDataError
from chiarella_system.estimation.filtering import StateSpaceSpec, run_filter
from conftest import monthly_dates, synthetic_log_prices


@pytest.fixture
def calibrated_asset(index_params):
    logp, _ = synthetic_log_prices(index_params, 240, seed=12)
    raw = RawSeries(id='idx', dates=monthly_dates(240, '1940-01-01'), prices=np.exp(logp))
    clean = preprocess_series(raw)
    return clean, run_filter(StateSpaceSpec(index_params, clean.dedrifted))


def test_normalized_trend_is_clipped():
    raw = pd.Series(np.random.default_rng(0).normal(size=200))
    trend = normalized_trend(raw).dropna()
    assert trend.abs().max() <= 1.0
    assert (trend.abs() == 1.0).any()


def test_pnl_starts_after_the_warmup():
    dates = monthly_dates(60)
    prices = pd.Series(100.0 + np.cumsum(np.random.default_rng(1).normal(size=60)), index=dates)
    pnl = signal_pnl(pd.Series(1.0, index=dates), prices, warmup=12)
    assert len(pnl) == 48
    assert pnl.index[0] == dates[12]


def test_pnl_uses_yesterdays_signal():
    dates = monthly_dates(40)
    prices = pd.Series(100.0 + np.cumsum(np.random.default_rng(2).normal(size=40)), index=dates)
    signal = pd.Series(0.0, index=dates)
    signal.iloc[-1] = 1.0
    pnl = signal_pnl(signal, prices, warmup=12)
    # a position opened on the last date never earns anything
    assert (pnl == 0.0).all()


def test_backtest_periods(index_params, calibrated_asset):
    clean, result = calibrated_asset
    outcome = backtest_signals(index_params, clean, result)
    assert set(outcome.sr_trend) == {'full', 'before 1950-01-01', 'from 1950-01-01'}
    assert set(outcome.sr_value) == set(outcome.sr_trend)
    assert all(v is not None for v in outcome.sr_value.values())
    assert outcome.dates[0] >= clean.dates[12]
    frame = outcome.to_frame()
    assert list(frame.columns) == ['date', 'pnl_trend', 'pnl_value']
    summary = outcome.summary()
    assert summary['asset'] == 'idx'
    assert summary['period'][1] == '1959-12-01'


def test_empty_period_has_no_sharpe(index_params, calibrated_asset):
    clean, result = calibrated_asset
    outcome = backtest_signals(index_params, clean, result, split_date='1900-01-01')
    assert outcome.sr_trend['before 1900-01-01'] is None
    assert outcome.sr_trend['from 1900-01-01'] == outcome.sr_trend['full']


def test_value_signal_sign(index_params, calibrated_asset):
    clean, result = calibrated_asset
    signals = build_signals(index_params, clean, result)
    gap = result.v_pred - clean.dedrifted
    # long when the price sits under the estimated value
    assert (np.sign(signals['value'].to_numpy()) == np.sign(gap)).all()


def test_misaligned_filter_output_is_rejected(index_params, calibrated_asset):
    clean, _ = calibrated_asset
    short = run_filter(StateSpaceSpec(index_params, clean.dedrifted[:100]))
    with pytest.raises(InputDataError):
        build_signals(index_params, clean, short)
