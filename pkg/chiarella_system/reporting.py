"""
Reporting - canonical JSON / CSV writers, content hashing and the calibration stage cache
"""
import hashlib
import json
import logging
import os
from dataclasses import asdict, is_dataclass
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from .config import CACHE_DIRNAME

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.10g"


def _plain(obj: Any) -> Any:
    """Recursively turn dataclasses, numpy and pandas values into JSON-ready objects"""
    if hasattr(obj, 'to_dict') and is_dataclass(obj):
        return _plain(obj.to_dict(encode_json=False))
    if is_dataclass(obj) and not isinstance(obj, type):
        return _plain(asdict(obj))
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (pd.Timestamp,)):
        return obj.strftime('%Y-%m-%d')
    if isinstance(obj, pd.DatetimeIndex):
        return [d.strftime('%Y-%m-%d') for d in obj]
    return obj


def canonical_json(obj: Any) -> str:
    """Sorted keys and fixed indentation so identical inputs give identical bytes"""
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def content_hash(*parts: Any) -> str:
    digest = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            digest.update(part)
        elif isinstance(part, str):
            digest.update(part.encode('utf-8'))
        else:
            digest.update(canonical_json(part).encode('utf-8'))
        digest.update(b'\x00')
    return digest.hexdigest()


class ReportWriter:
    def __init__(self, output_dir: str):
        self.name = "Report Writer"
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)

    def path(self, *parts: str) -> str:
        full = os.path.join(self.output_dir, *parts)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    def write_json(self, relpath: str, obj: Any) -> str:
        target = self.path(relpath)
        with open(target, 'w') as f:
            f.write(canonical_json(obj))
        logger.info(f"Wrote {target}")
        return target

    def write_csv(self, relpath: str, frame: pd.DataFrame) -> str:
        target = self.path(relpath)
        frame.to_csv(target, index=False, float_format=CSV_FLOAT_FORMAT)
        logger.info(f"Wrote {target}")
        return target

    def read_json(self, relpath: str) -> Optional[Dict]:
        target = os.path.join(self.output_dir, relpath)
        if not os.path.exists(target):
            return None
        with open(target, 'r') as f:
            return json.load(f)


class StageCache:
    """Per-asset artifacts keyed by the SHA-256 of their inputs"""

    def __init__(self, writer: ReportWriter, stage: str):
        self.writer = writer
        self.stage = stage

    def _relpath(self, key: str) -> str:
        return os.path.join(CACHE_DIRNAME, self.stage, f"{key}.json")

    def get(self, key: str, digest: str) -> Optional[Dict]:
        entry = self.writer.read_json(self._relpath(key))
        if entry is None or entry.get('input_hash') != digest:
            return None
        logger.info(f"Cache hit for {self.stage}/{key}")
        return entry['payload']

    def put(self, key: str, digest: str, payload: Any) -> None:
        self.writer.write_json(self._relpath(key), {'input_hash': digest, 'payload': payload})
