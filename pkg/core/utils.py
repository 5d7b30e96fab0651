"""utils.py — Shared utility functions for branch-lln."""
import json
import logging
import threading
import traceback
from collections import OrderedDict
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

from config import ERROR_LOG_MAX, OUTPUT_DIR

logger = logging.getLogger(__name__)


def safe_filename(title: str) -> str:
    return title.replace("/", "-").replace(":", "-").replace(" ", "_")


class LRUCache:
    """Bounded memo for deterministic numeric results (quadratures keyed by their inputs).

    Guarded by a lock, so one instance may be shared between threads.
    """

    def __init__(self, max_size: int = 200):
        self._store: OrderedDict = OrderedDict()
        self._max_size = max_size
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key):
        with self._lock:
            if key not in self._store:
                self.misses += 1
                return None
            self.hits += 1
            self._store.move_to_end(key)
            return self._store[key]

    def set(self, key, value) -> None:
        with self._lock:
            self._store[key] = value
            self._store.move_to_end(key)
            while len(self._store) > self._max_size:
                self._store.popitem(last=False)

    def get_or_compute(self, key, compute: Callable[[], Any]):
        """Cached value for key; computes outside the lock on a miss."""
        hit = self.get(key)
        if hit is None:
            hit = compute()
            self.set(key, hit)
        return hit

    def __contains__(self, key) -> bool:
        return key in self._store

    def __len__(self) -> int:
        return len(self._store)


# ---------------------------------------------------------------------------
# Progress logging: one INFO line per 10% of completed tasks
# ---------------------------------------------------------------------------

def make_progress_cb(total: int, label: str = "replicas"):
    """Return a no-argument callback to call once per finished task.

    Call it from one thread only, e.g. the parent collecting pool results.
    """
    done = [0]
    last = [-1]
    def _cb():
        done[0] += 1
        step = (done[0] * 10 // total) * 10 if total else 100
        if step == last[0]: return
        last[0] = step
        if step > 0:
            logger.info("%s: %d/%d (%d%%)", label, done[0], total, step)
    return _cb


# ---------------------------------------------------------------------------
# Persistent error log  (<output dir>/errors.json)
# Appends one JSON object per error. Capped at ERROR_LOG_MAX entries (oldest dropped).
# ---------------------------------------------------------------------------

def log_error(
    error: BaseException,
    context: str = "",
    extra: dict | None = None,
    directory: Path | None = None,
) -> None:
    """Append an error record to errors.json.

    Args:
        error:     The exception that occurred.
        context:   Short label for where it happened (e.g. 'run:qsd').
        extra:     Optional dict of additional fields (config path, seed, ...).
        directory: Where errors.json lives; defaults to OUTPUT_DIR.
    """
    directory = Path(directory) if directory is not None else OUTPUT_DIR
    path = directory / "errors.json"
    record = {
        "ts":      datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "context": context,
        "type":    type(error).__name__,
        "msg":     str(error),
        "tb":      traceback.format_exc(),
    }
    if extra:
        record.update(extra)

    try:
        directory.mkdir(parents=True, exist_ok=True)
        try:
            entries = json.loads(path.read_text(encoding="utf-8"))
            if not isinstance(entries, list):
                entries = []
        except (FileNotFoundError, json.JSONDecodeError):
            entries = []

        entries.append(record)
        if len(entries) > ERROR_LOG_MAX:
            entries = entries[-ERROR_LOG_MAX:]   # keep newest

        path.write_text(json.dumps(entries, ensure_ascii=False, indent=2), encoding="utf-8")
    except Exception as e:
        logger.warning("Could not write errors.json: %s", e)
