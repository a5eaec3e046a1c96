"""
Artifact cache: the binary table format and the two cache layers.
"""
import struct

import numpy as np
import pytest

from parafact.services.cache_service import CacheService, Table, decode_table, encode_table


@pytest.fixture
def cache(tmp_path):
    return CacheService(cache_dir=str(tmp_path / "tables"), size=2, enabled=True)


def sample_table() -> Table:
    return Table(axes=[(0.0, 1.0, 5)], values=np.vstack([np.linspace(0, 1, 5), np.arange(5.0)]))


def test_table_codec():
    table = sample_table()
    blob = encode_table(table)
    assert blob[:4] == b"PFTB"
    assert len(blob) == struct.calcsize("<4sHHI") + struct.calcsize("<ddI") + 10 * 8
    back = decode_table(blob)
    assert back.axes == [(0.0, 1.0, 5)]
    assert np.array_equal(back.values, table.values)
    assert back.grid() == pytest.approx(np.linspace(0, 1, 5))


def test_table_shape_must_match_axes():
    with pytest.raises(ValueError):
        encode_table(Table(axes=[(0.0, 1.0, 4)], values=np.zeros((2, 5))))


@pytest.mark.parametrize("damage", [
    lambda blob: blob[:6],
    lambda blob: b"XXXX" + blob[4:],
    lambda blob: blob[:4] + struct.pack("<H", 9) + blob[6:],
    lambda blob: blob[:-8],
])
def test_damaged_tables_are_rejected(damage):
    with pytest.raises(ValueError):
        decode_table(damage(encode_table(sample_table())))


def test_cache_keys_are_deterministic(cache):
    key = cache.generate_cache_key("time_inverse", "exp(t)", {"window": [0, 1]})
    assert key == cache.generate_cache_key("time_inverse", "exp(t)", {"window": [0, 1]})
    assert key != cache.generate_cache_key("time_inverse", "exp(t)", {"window": [0, 2]})
    prefix, kind, digest = key.split(":")
    assert (prefix, kind, len(digest)) == ("parafact", "time_inverse", 16)


def test_local_layer_evicts_least_recent(cache):
    cache.set_local("a", 1)
    cache.set_local("b", 2)
    assert cache.get_local("a") == 1
    cache.set_local("c", 3)
    assert cache.get_local("b") is None
    assert cache.get_local("a") == 1
    assert cache.get_local(["unhashable"]) is None


def test_tables_survive_a_new_process(cache):
    key = cache.generate_cache_key("test", "table")
    assert cache.get_table(key) == (None, None)
    cache.set_table(key, sample_table())
    assert cache.get_table(key)[1] == "l1"

    fresh = CacheService(cache_dir=cache.cache_dir, size=2, enabled=True)
    table, origin = fresh.get_table(key)
    assert origin == "l2"
    assert np.array_equal(table.values, sample_table().values)
    assert fresh.get_table(key)[1] == "l1"


def test_invalidate_removes_both_layers(cache):
    key = cache.generate_cache_key("test", "gone")
    cache.set_table(key, sample_table())
    cache.invalidate(key)
    assert cache.get_table(key) == (None, None)
    cache.invalidate(key)


def test_disabled_cache_keeps_tables_in_memory(tmp_path):
    cache = CacheService(cache_dir=str(tmp_path / "off"), enabled=False)
    key = cache.generate_cache_key("test", "memory")
    cache.set_table(key, sample_table())
    assert not (tmp_path / "off").exists()
    assert cache.get_table(key)[1] == "l1"
    assert cache.health_check()


def test_health_check(cache):
    assert cache.health_check()
