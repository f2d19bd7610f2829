"""
Preprocessing - CPI adjustment, exclusion-window stitching and polynomial de-drifting
of monthly log-price series
"""
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial import Legendre

from ..errors import DriftFitError, InputDataError
from ..model.simulator import DriftModel
from .price_series_loader import RawSeries

logger = logging.getLogger(__name__)

YEARS_PER_ORDER = 10


@dataclass(frozen=True)
class CleanSeries:
    id: str
    dates: pd.DatetimeIndex
    logp: np.ndarray
    dedrifted: np.ndarray
    drift: DriftModel

    def __post_init__(self):
        if len(self.logp) != len(self.dedrifted) or len(self.logp) != len(self.dates):
            raise InputDataError(f"{self.id}: misaligned clean series")

    def __len__(self) -> int:
        return len(self.logp)

    @property
    def times(self) -> np.ndarray:
        """Contiguous month index, the time axis of the drift polynomial"""
        return np.arange(len(self.logp), dtype=float)

    @property
    def G(self) -> np.ndarray:
        return self.logp - self.dedrifted

    @property
    def prices(self) -> np.ndarray:
        return np.exp(self.logp)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'date': self.dates.strftime('%Y-%m-%d'),
            'logp': self.logp,
            'G': self.G,
            'dedrifted': self.dedrifted,
        })

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.10g")


def cpi_adjust(raw: RawSeries) -> RawSeries:
    """Real prices: price_t * cpi_t / cpi_last, so the last price is unchanged"""
    if raw.cpi is None:
        raise InputDataError(f"{raw.id}: no CPI to adjust with")
    cpi = np.asarray(raw.cpi, dtype=float)
    if len(cpi) != len(raw.prices) or not np.all(np.isfinite(cpi)) or np.any(cpi <= 0):
        raise InputDataError(f"{raw.id}: CPI must be positive and aligned with prices")
    return raw.with_prices(raw.prices * (cpi / cpi[-1]))


def _as_windows(windows: Iterable[Sequence]) -> List[Tuple[pd.Timestamp, pd.Timestamp]]:
    parsed = []
    for window in windows or []:
        if len(window) != 2:
            raise InputDataError(f"exclusion window must be a [start, end] pair, got {window!r}")
        start, end = pd.Timestamp(window[0]), pd.Timestamp(window[1])
        if end < start:
            raise InputDataError(f"exclusion window ends before it starts: {window!r}")
        parsed.append((start, end))
    return parsed


def stitch_gaps(raw: RawSeries, exclusion_windows: Iterable[Sequence]) -> RawSeries:
    """
    Drop rows inside the exclusion windows, then shift everything left of each gap
    so the last pre-gap log-price meets the first post-gap one.
    """
    windows = _as_windows(exclusion_windows)
    if not windows:
        return raw

    dates = raw.dates
    keep = np.ones(len(dates), dtype=bool)
    for start, end in windows:
        if end < dates[0] or start > dates[-1]:
            logger.warning(f"{raw.id}: exclusion window {start:%Y-%m} to {end:%Y-%m} lies outside the data")
            continue
        keep &= ~((dates >= start) & (dates <= end))

    if not keep.any():
        raise InputDataError(f"{raw.id}: exclusion windows cover the entire series")

    kept = np.flatnonzero(keep)
    logp = raw.log_prices[kept]
    # a seam is a pair of surviving neighbours with excluded rows between them
    seams = np.flatnonzero(np.diff(kept) > 1)
    offset = 0.0
    shifts = np.zeros(len(kept))
    for s in seams[::-1]:
        offset += logp[s + 1] - logp[s]
        shifts[:s + 1] = offset
    logp = logp + shifts

    logger.info(f"{raw.id}: removed {len(dates) - len(kept)} months, stitched {len(seams)} gap(s)")
    return RawSeries(id=raw.id, dates=dates[kept], prices=np.exp(logp),
                     cpi=None if raw.cpi is None else np.asarray(raw.cpi)[kept])


def span_years(dates: pd.DatetimeIndex) -> int:
    """Whole years between first and last timestamp"""
    months = (dates[-1].year - dates[0].year) * 12 + (dates[-1].month - dates[0].month)
    return months // 12


def drift_order_for_span(years: int, override: Optional[int] = None) -> int:
    if override is not None:
        return int(override)
    return int(years) // YEARS_PER_ORDER


def fit_drift(logp: np.ndarray, years: int, times: Optional[np.ndarray] = None,
              order: Optional[int] = None) -> DriftModel:
    """
    Least-squares Legendre fit of order k = floor(years / 10) (or an explicit order)
    on time rescaled to [-1, 1]
    """
    logp = np.asarray(logp, dtype=float)
    k = drift_order_for_span(years, order)
    times = np.arange(len(logp), dtype=float) if times is None else np.asarray(times, dtype=float)
    if len(logp) < k + 1:
        raise DriftFitError(k, f"{len(logp)} points cannot determine a polynomial")
    if not np.all(np.isfinite(logp)):
        raise InputDataError("log-prices must be finite")

    if len(logp) == 1:
        return DriftModel.constant(float(logp[0]), domain=(times[0] - 0.5, times[0] + 0.5))

    series, (_, rank, _, _) = Legendre.fit(times, logp, deg=k, domain=[times[0], times[-1]], full=True)
    if rank < k + 1:
        raise DriftFitError(k)
    logger.debug(f"Drift fit: order {k} over {len(logp)} months")
    return DriftModel.from_legendre(series)


def dedrift(logp: np.ndarray, drift: DriftModel, times: Optional[np.ndarray] = None) -> np.ndarray:
    logp = np.asarray(logp, dtype=float)
    times = np.arange(len(logp), dtype=float) if times is None else times
    return logp - drift.G(times)


def redrift(series: np.ndarray, drift: DriftModel, times: Optional[np.ndarray] = None) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    times = np.arange(len(series), dtype=float) if times is None else times
    return series + drift.G(times)


def preprocess_series(raw: RawSeries, exclusion_windows: Iterable[Sequence] = (),
                      drift_order_override: Optional[int] = None) -> CleanSeries:
    """CPI adjustment (when CPI is present), stitching, drift fit and de-drifting"""
    series = cpi_adjust(raw) if raw.cpi is not None else raw
    series = stitch_gaps(series, exclusion_windows)
    years = span_years(series.dates)
    logp = series.log_prices
    drift = fit_drift(logp, years, order=drift_order_override)
    logger.info(f"{raw.id}: {years} years, drift order {drift.order}")
    return CleanSeries(id=raw.id, dates=series.dates, logp=logp,
                       dedrifted=dedrift(logp, drift), drift=drift)
