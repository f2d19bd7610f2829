#!/usr/bin/env python3
"""
Tests for price loading, CPI adjustment, gap stitching and de-drifting
"""
import logging

import numpy as np
import pandas as pd
import pytest

from chiarella_system.config import AssetConfig
from chiarella_system.data_sources.preprocessing import (cpi_adjust, dedrift, drift_order_for_span, fit_drift,
                                                         preprocess_series, redrift, span_years, stitch_gaps)
from chiarella_system.data_sources.price_series_loader import (PriceSeriesLoader, RawSeries, file_digest,
                                                               load_price_csv)
from chiarella_system.errors import DriftFitError, InputDataError
from conftest import monthly_dates


def raw_from_log(logp, start='1900-01-01', cpi=None):
    return RawSeries(id='test', dates=monthly_dates(len(logp), start), prices=np.exp(logp), cpi=cpi)


def jump_series(n=120, jump_at=60, jump=0.7):
    logp = 0.01 * np.arange(n)
    logp[jump_at:] += jump
    return raw_from_log(logp)


def test_no_windows_is_identity():
    raw = jump_series()
    assert stitch_gaps(raw, []) is raw


def test_stitching_removes_the_jump_across_an_excluded_window():
    raw = jump_series()
    # 1905-01 is month 60; remove 1904-11 .. 1905-02
    stitched = stitch_gaps(raw, [["1904-11-01", "1905-02-28"]])
    assert len(stitched) == 116
    returns = np.diff(stitched.log_prices)
    seam = 57  # last surviving month before the gap is 1904-10
    assert stitched.dates[seam] == pd.Timestamp('1904-10-01')
    assert returns[seam] == pytest.approx(0.0, abs=1e-12)
    # every other log-return survives unchanged
    others = np.delete(returns, seam)
    np.testing.assert_allclose(others, 0.01, atol=1e-12)
    # the right end is never moved
    assert stitched.log_prices[-1] == pytest.approx(raw.log_prices[-1], abs=1e-12)


def test_two_windows_are_stitched_independently():
    raw = jump_series(n=240, jump_at=200)
    stitched = stitch_gaps(raw, [["1903-01-01", "1903-06-30"], ["1916-07-01", "1916-09-30"]])
    returns = np.diff(stitched.log_prices)
    assert np.count_nonzero(np.abs(returns) < 1e-9) == 2
    assert np.all(np.abs(returns) < 0.01 + 1e-9)


def test_window_covering_everything_is_an_error():
    with pytest.raises(InputDataError):
        stitch_gaps(jump_series(), [["1890-01-01", "1950-01-01"]])


def test_window_outside_the_data_is_skipped(caplog):
    raw = jump_series()
    with caplog.at_level(logging.WARNING):
        stitched = stitch_gaps(raw, [["1950-01-01", "1951-01-01"]])
    assert len(stitched) == len(raw)
    assert "outside the data" in caplog.text


def test_reversed_window_is_rejected():
    with pytest.raises(InputDataError):
        stitch_gaps(jump_series(), [["1905-01-01", "1904-01-01"]])


def test_cpi_adjustment_keeps_the_last_price():
    logp = np.log(np.array([10.0, 11.0, 12.0, 13.0]))
    cpi = np.array([50.0, 60.0, 80.0, 100.0])
    adjusted = cpi_adjust(raw_from_log(logp, cpi=cpi))
    np.testing.assert_allclose(adjusted.prices, [5.0, 6.6, 9.6, 13.0])


def test_span_years_and_drift_order():
    dates = monthly_dates(1200)  # 1900-01 .. 1999-12
    assert span_years(dates) == 99
    assert drift_order_for_span(99) == 9
    assert drift_order_for_span(9) == 0
    assert drift_order_for_span(99, override=3) == 3


def test_polynomial_drift_is_removed_exactly():
    t = np.arange(360, dtype=float)
    logp = 1.0 + 0.002 * t - 1e-6 * t ** 2
    drift = fit_drift(logp, years=30)
    assert drift.order == 3
    np.testing.assert_allclose(dedrift(logp, drift), 0.0, atol=1e-8)


def test_dedrift_and_redrift_are_inverse():
    rng = np.random.default_rng(0)
    logp = np.cumsum(rng.normal(0.0, 0.05, 300))
    drift = fit_drift(logp, years=25)
    np.testing.assert_allclose(redrift(dedrift(logp, drift), drift), logp, atol=1e-12)


def test_too_few_points_for_the_order():
    with pytest.raises(DriftFitError):
        fit_drift(np.ones(3), years=50)


def test_loader_reads_and_merges_cpi(tmp_path):
    dates = monthly_dates(24).strftime('%Y-%m-%d')
    pd.DataFrame({'Date': dates, 'Price': np.linspace(10, 20, 24)}).to_csv(tmp_path / 'a.csv', index=False)
    pd.DataFrame({'date': monthly_dates(30).strftime('%Y-%m-15'), 'cpi': np.linspace(50, 80, 30)}).to_csv(
        tmp_path / 'cpi.csv', index=False)
    raw = PriceSeriesLoader().load(AssetConfig(id='a', csv_path=str(tmp_path / 'a.csv'),
                                               cpi_path=str(tmp_path / 'cpi.csv')))
    assert len(raw) == 24
    assert raw.cpi[0] == pytest.approx(50.0)
    assert raw.prices[-1] == pytest.approx(20.0)


@pytest.mark.parametrize("rows", [
    {'date': ['1900-01-01', '1900-01-15'], 'price': [1.0, 2.0]},   # two rows in one month
    {'date': ['1900-02-01', '1900-01-01'], 'price': [1.0, 2.0]},   # out of order
    {'date': ['1900-01-01', '1900-02-01'], 'price': [1.0, -2.0]},  # non-positive price
    {'date': ['01/02/1900', '02/02/1900'], 'price': [1.0, 2.0]},   # not ISO
])
def test_loader_rejects_malformed_series(tmp_path, rows):
    path = tmp_path / 'bad.csv'
    pd.DataFrame(rows).to_csv(path, index=False)
    with pytest.raises(InputDataError):
        load_price_csv(str(path))


def test_loader_reports_missing_files(tmp_path):
    with pytest.raises(InputDataError):
        load_price_csv(str(tmp_path / 'missing.csv'))


def test_file_digest_tracks_content(tmp_path):
    path = tmp_path / 'x.csv'
    path.write_text("date,price\n1900-01-01,1\n")
    first = file_digest(str(path))
    path.write_text("date,price\n1900-01-01,2\n")
    assert file_digest(str(path)) != first
    assert len(first) == 64


def test_preprocess_series_end_to_end(price_csv_factory, index_params):
    path = price_csv_factory('idx', index_params, n=480, seed=4)
    clean = preprocess_series(load_price_csv(str(path)), [["1910-01-01", "1911-12-31"]])
    assert len(clean) == 456
    assert clean.drift.order == 3  # 1900-01 .. 1939-12 spans 39 years
    np.testing.assert_allclose(clean.G + clean.dedrifted, clean.logp)
    assert abs(np.mean(clean.dedrifted)) < 1e-8
    frame = clean.to_frame()
    assert list(frame.columns) == ['date', 'logp', 'G', 'dedrifted']
    assert frame['date'].iloc[0] == '1900-01-01'
