"""Tests for core.utils — cache, progress callback and the error log."""
import json
import logging

from core.errors import NoSurvivors
from core.utils import LRUCache, log_error, make_progress_cb, safe_filename


def test_lru_evicts_oldest():
    cache = LRUCache(max_size=2)
    cache.set("a", 1)
    cache.set("b", 2)
    assert cache.get("a") == 1
    cache.set("c", 3)
    assert "b" not in cache
    assert len(cache) == 2


def test_get_or_compute_calls_once():
    cache = LRUCache()
    calls = []
    for _ in range(3):
        assert cache.get_or_compute(("k", 1.0), lambda: calls.append(1) or 42.0) == 42.0
    assert len(calls) == 1
    assert (cache.hits, cache.misses) == (2, 1)


def test_progress_logs_each_decile(caplog):
    cb = make_progress_cb(20, label="replicas")
    with caplog.at_level(logging.INFO, logger="core.utils"):
        for _ in range(20):
            cb()
    assert len(caplog.records) == 10
    assert "20/20 (100%)" in caplog.records[-1].getMessage()


def test_log_error_appends(tmp_path):
    for i in range(2):
        try:
            raise NoSurvivors(f"attempt {i}")
        except NoSurvivors as e:
            log_error(e, context="run:qsd", extra={"seed": i}, directory=tmp_path)
    entries = json.loads((tmp_path / "errors.json").read_text(encoding="utf-8"))
    assert [e["seed"] for e in entries] == [0, 1]
    assert entries[0]["type"] == "NoSurvivors"
    assert "attempt 1" in entries[1]["msg"]


def test_safe_filename():
    assert safe_filename("qsd/killed bm:7") == "qsd-killed_bm-7"
