"""
Price Series Loader - reads monthly price CSVs (date,price[,cpi]) into RawSeries
"""
import hashlib
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from ..config import AssetConfig
from ..errors import InputDataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RawSeries:
    id: str
    dates: pd.DatetimeIndex
    prices: np.ndarray
    cpi: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.dates) != len(self.prices):
            raise InputDataError(f"{self.id}: {len(self.dates)} dates for {len(self.prices)} prices")
        if self.cpi is not None and len(self.cpi) != len(self.prices):
            raise InputDataError(f"{self.id}: CPI is not aligned with prices")
        if len(self.prices) == 0:
            raise InputDataError(f"{self.id}: empty series")
        if not np.all(np.isfinite(self.prices)) or np.any(self.prices <= 0):
            raise InputDataError(f"{self.id}: prices must be finite and > 0")
        months = self.dates.to_period('M')
        if not months.is_monotonic_increasing or months.has_duplicates:
            raise InputDataError(f"{self.id}: dates must be strictly increasing, one row per month")

    def __len__(self) -> int:
        return len(self.prices)

    @property
    def log_prices(self) -> np.ndarray:
        return np.log(self.prices)

    def with_prices(self, prices: np.ndarray, dates: Optional[pd.DatetimeIndex] = None,
                    cpi: Optional[np.ndarray] = None) -> 'RawSeries':
        return RawSeries(id=self.id, dates=self.dates if dates is None else dates,
                         prices=np.asarray(prices, dtype=float), cpi=cpi)


class PriceSeriesLoader:
    def __init__(self):
        self.name = "Monthly Price Series Loader"
        self.version = "1.0"

    def load(self, asset: AssetConfig) -> RawSeries:
        """Load one asset, merging an external CPI file on calendar month when given"""
        frame = self._read(asset.csv_path, required=('date', 'price'))
        cpi = frame['cpi'].to_numpy(dtype=float) if 'cpi' in frame.columns else None

        if asset.cpi_path:
            cpi_frame = self._read(asset.cpi_path, required=('date', 'cpi'))
            by_month = cpi_frame.set_index(cpi_frame['date'].dt.to_period('M'))['cpi']
            aligned = by_month.reindex(frame['date'].dt.to_period('M'))
            if aligned.isna().any():
                missing = aligned[aligned.isna()].index[:3].astype(str).tolist()
                raise InputDataError(f"{asset.id}: CPI missing for months {missing}")
            cpi = aligned.to_numpy(dtype=float)

        series = RawSeries(
            id=asset.id,
            dates=pd.DatetimeIndex(frame['date']),
            prices=frame['price'].to_numpy(dtype=float),
            cpi=cpi,
        )
        logger.info(f"Loaded {asset.id}: {len(series)} months "
                    f"({series.dates[0]:%Y-%m} to {series.dates[-1]:%Y-%m})")
        return series

    def _read(self, path: str, required) -> pd.DataFrame:
        if not os.path.exists(path):
            raise InputDataError(f"file not found: {path}")
        try:
            frame = pd.read_csv(path)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise InputDataError(f"cannot parse {path}: {e}") from e

        frame.columns = [str(c).strip().lower() for c in frame.columns]
        missing = [c for c in required if c not in frame.columns]
        if missing:
            raise InputDataError(f"{path}: missing column(s) {missing}")
        try:
            frame['date'] = pd.to_datetime(frame['date'], format='ISO8601')
        except (ValueError, TypeError) as e:
            raise InputDataError(f"{path}: dates must be ISO formatted: {e}") from e
        if frame[list(required[1:])].isna().any().any():
            raise InputDataError(f"{path}: missing values")
        return frame


def load_price_csv(csv_path: str, asset_id: Optional[str] = None, cpi_path: Optional[str] = None) -> RawSeries:
    asset_id = asset_id or os.path.splitext(os.path.basename(csv_path))[0]
    return PriceSeriesLoader().load(AssetConfig(id=asset_id, csv_path=csv_path, cpi_path=cpi_path))


def file_digest(path: str) -> str:
    """SHA-256 of the raw file bytes, used to key cached calibration artifacts"""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b''):
            digest.update(block)
    return digest.hexdigest()
