"""results.py — CSV and JSON summary writers.

``<stem>.csv``          fixed header per experiment, one row per record
``<stem>.json``         config echo, version, seed, wall time, estimators, quadratures, extras

Apart from the ``wall_time_s`` key (see ``deterministic_view``) both files are
identical across reruns and worker counts.

Numbers are written with 17 significant digits and '.' as decimal point
regardless of locale; NaN is written as ``nan`` in CSV and ``null`` in JSON.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from config import CSV_HEADERS, VERSION

from .errors import IoError

logger = logging.getLogger(__name__)


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if v is None:
        return ""
    return str(v)


def jsonable(v):
    """Plain JSON types; non-finite floats become None (or 'inf'/'-inf')."""
    if hasattr(v, "to_dict"):
        return jsonable(v.to_dict())
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


def output_stem(path: Path | str) -> Path:
    """'out/run', 'out/run.csv' and 'out/run.json' all name the stem 'out/run'."""
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".csv", ".json") else p


TIMING_KEYS = ("wall_time_s",)


def summary(result, config_echo: dict, wall_time: float | None = None) -> dict:
    return {
        "version": VERSION,
        "experiment": result.experiment,
        "seed": config_echo.get("seed"),
        "wall_time_s": None if wall_time is None else round(wall_time, 3),
        "config": jsonable(config_echo),
        "replicas": {"requested": result.n_rep, "failed": result.failures, "overflowed": result.overflow_count},
        "estimators": {k: jsonable(v) for k, v in result.estimators.items()},
        "quadratures": {k: jsonable(v) for k, v in result.quadratures.items()},
        "extra": jsonable(result.extra),
    }


def emit(result, config_echo: dict, path: Path | str, wall_time: float | None = None) -> tuple[Path, Path]:
    """Write the CSV and JSON summary for one experiment; returns their paths."""
    stem = output_stem(path)
    csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
    header = CSV_HEADERS[result.experiment]
    try:
        stem.parent.mkdir(parents=True, exist_ok=True)
        with csv_path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in result.rows:
                if len(row) != len(header):
                    raise IoError(f"row of width {len(row)} does not match the {result.experiment} header")
                writer.writerow([format_value(v) for v in row])
        json_path.write_text(json.dumps(summary(result, config_echo, wall_time), indent=2, allow_nan=False) + "\n",
                             encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot write results to {stem}: {e}") from None
    logger.info("wrote %s (%d rows) and %s", csv_path, len(result.rows), json_path.name)
    return csv_path, json_path


def deterministic_view(json_path: Path | str) -> dict:
    """Summary JSON without the timing keys; equal across reruns with the same seed."""
    data = json.loads(Path(json_path).read_text(encoding="utf-8"))
    for key in TIMING_KEYS:
        data.pop(key, None)
    return data
