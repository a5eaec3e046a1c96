import json
import hashlib
import logging
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Hashable, List, Optional, Tuple

import numpy as np

from parafact.core.config import CACHE_DIR, CACHE_ENABLED, L1_CACHE_SIZE

logger = logging.getLogger(__name__)

TABLE_MAGIC = b"PFTB"
TABLE_VERSION = 1
_HEADER = struct.Struct("<4sHHI")
_AXIS = struct.Struct("<ddI")


@dataclass
class Table:
    """
    Tabulated numeric artifact: `values` has shape (ncols, *counts) over a
    regular grid with one (lo, hi, count) triple per axis.
    """
    axes: List[Tuple[float, float, int]]
    values: np.ndarray

    @property
    def ncols(self) -> int:
        return int(self.values.shape[0])

    def grid(self, axis: int = 0) -> np.ndarray:
        lo, hi, count = self.axes[axis]
        return np.linspace(lo, hi, count)


def encode_table(table: Table) -> bytes:
    counts = [int(c) for _, _, c in table.axes]
    values = np.ascontiguousarray(table.values, dtype="<f8")
    if values.shape != (table.ncols, *counts):
        raise ValueError(f"Table payload shape {values.shape} does not match axes {counts}")
    parts = [_HEADER.pack(TABLE_MAGIC, TABLE_VERSION, len(table.axes), table.ncols)]
    for lo, hi, count in table.axes:
        parts.append(_AXIS.pack(float(lo), float(hi), int(count)))
    parts.append(values.tobytes(order="C"))
    return b"".join(parts)


def decode_table(blob: bytes) -> Table:
    if len(blob) < _HEADER.size:
        raise ValueError("Table file truncated")
    magic, version, ndim, ncols = _HEADER.unpack_from(blob, 0)
    if magic != TABLE_MAGIC:
        raise ValueError(f"Bad table magic {magic!r}")
    if version != TABLE_VERSION:
        raise ValueError(f"Unsupported table version {version}")
    offset = _HEADER.size
    axes = []
    for _ in range(ndim):
        lo, hi, count = _AXIS.unpack_from(blob, offset)
        axes.append((lo, hi, count))
        offset += _AXIS.size
    shape = (ncols, *[c for _, _, c in axes])
    expected = int(np.prod(shape)) * 8
    if len(blob) - offset != expected:
        raise ValueError(f"Table payload has {len(blob) - offset} bytes, expected {expected}")
    values = np.frombuffer(blob, dtype="<f8", offset=offset).reshape(shape).astype(np.float64)
    return Table(axes=axes, values=values)


class CacheService:
    """
    Two-layer artifact cache:
    - L1: in-process LRU (compiled evaluators, loaded tables)
    - L2: binary table files under the cache directory
    """

    def __init__(self, cache_dir: str = CACHE_DIR, size: int = L1_CACHE_SIZE, enabled: bool = CACHE_ENABLED):
        self.cache_dir = cache_dir
        self.size = size
        self.enabled = enabled
        self._local: "OrderedDict[Hashable, Any]" = OrderedDict()
        self.hits = 0
        self.misses = 0

    def generate_cache_key(self, kind: str, payload: Any, params: dict = None) -> str:
        """
        Generate a deterministic cache key based on artifact kind, payload, and parameters.
        """
        key_parts = {
            "kind": kind,
            "input": payload,
            "params": params or {}
        }
        key_string = json.dumps(key_parts, sort_keys=True, ensure_ascii=False, default=str)
        key_hash = hashlib.sha256(key_string.encode()).hexdigest()
        return f"parafact:{kind}:{key_hash[:16]}"

    # L1

    def get_local(self, key: Hashable) -> Optional[Any]:
        try:
            value = self._local[key]
        except (KeyError, TypeError):
            self.misses += 1
            return None
        self._local.move_to_end(key)
        self.hits += 1
        return value

    def set_local(self, key: Hashable, value: Any):
        try:
            self._local[key] = value
            self._local.move_to_end(key)
        except TypeError as e:
            logger.warning(f"Unhashable L1 key skipped: {e}")
            return
        while len(self._local) > self.size:
            self._local.popitem(last=False)

    def clear_local(self):
        self._local.clear()

    # L2

    def _path(self, key: str) -> str:
        return os.path.join(self.cache_dir, key.replace(":", "_") + ".pftb")

    def get_table(self, key: str) -> Tuple[Optional[Table], Optional[str]]:
        """
        Try L1 first, then the table file.
        Returns: (table, cache_source) or (None, None)
        """
        local = self.get_local(key)
        if isinstance(local, Table):
            logger.debug(f"Cache HIT in L1 for key: {key}")
            return local, "l1"

        if self.enabled:
            path = self._path(key)
            if os.path.exists(path):
                try:
                    with open(path, "rb") as fh:
                        table = decode_table(fh.read())
                    logger.info(f"Cache HIT in table file for key: {key}")
                    # Promote to L1 for repeated access
                    self.set_local(key, table)
                    return table, "l2"
                except Exception as e:
                    logger.warning(f"Failed to read cached table {path}: {e}")

        logger.info(f"Cache MISS for key: {key}")
        return None, None

    def set_table(self, key: str, table: Table):
        """
        Store a table in L1 and, when enabled, in the table directory.
        """
        self.set_local(key, table)
        if not self.enabled:
            return
        try:
            os.makedirs(self.cache_dir, exist_ok=True)
            tmp = self._path(key) + ".tmp"
            with open(tmp, "wb") as fh:
                fh.write(encode_table(table))
            os.replace(tmp, self._path(key))
            logger.debug(f"Cached table {key} ({table.values.size} values)")
        except Exception as e:
            logger.warning(f"Failed to cache table {key}: {e}")

    def invalidate(self, key: str):
        self._local.pop(key, None)
        try:
            os.remove(self._path(key))
        except FileNotFoundError:
            pass
        except OSError as e:
            logger.warning(f"Failed to delete cached table {key}: {e}")

    def health_check(self) -> bool:
        """
        Check that the table directory is writable.
        """
        if not self.enabled:
            return True
        try:
            os.makedirs(self.cache_dir, exist_ok=True)
            probe = os.path.join(self.cache_dir, ".health")
            with open(probe, "wb") as fh:
                fh.write(b"ok")
            os.remove(probe)
            return True
        except OSError as e:
            logger.error(f"Cache health check failed: {e}")
            return False


# Global cache service instance
cache_service = CacheService()
