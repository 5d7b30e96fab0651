"""qsd.py — Quasi-stationary sampling from the empirical measure of the live front.

Conditioned on survival (or on D_T > ε), the normalized positions of ξ_T
approximate ν normalized. Two weightings:
  pooled       every live particle of every kept replica weighs the same
               (size-biased toward large families; the default)
  per_replica  each kept replica weighs 1/n_kept, split evenly over its particles
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np
from scipy.stats import ks_2samp, kstest

from .analysis import malthusian_d
from .engine import ReplicaBatch, Trajectory, run_replicas
from .errors import InvalidParameter, NoSurvivors
from .model import BranchConfig

logger = logging.getLogger(__name__)

QSD_MODES = ("pooled", "per_replica")


@dataclass(frozen=True)
class Condition:
    kind: str                 # "survival" | "d_positive"
    eps: float = 0.0

    @classmethod
    def parse(cls, value, eps: float | None = None) -> "Condition":
        if isinstance(value, Condition):
            return value
        if value == "survival":
            return cls("survival")
        if value == "d_positive":
            if eps is None or not eps > 0:
                raise InvalidParameter("condition 'd_positive' needs eps > 0")
            return cls("d_positive", float(eps))
        raise InvalidParameter(f"condition must be 'survival' or 'd_positive', got {value!r}")

    def describe(self) -> str:
        return "survival at T" if self.kind == "survival" else f"D_T > {self.eps:g}"


@dataclass(frozen=True)
class QsdReport:
    pooled_samples: int
    ks_distance: float | None
    histogram: tuple[tuple[float, ...], tuple[float, ...]]     # (edges, masses)
    conditioning: str
    mode: str
    n_kept: int
    n_rep: int
    replica_ids: np.ndarray = field(repr=False, compare=False)
    positions: np.ndarray = field(repr=False, compare=False)
    weights: np.ndarray = field(repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "pooled_samples": self.pooled_samples,
            "ks_distance": self.ks_distance,
            "conditioning": self.conditioning,
            "mode": self.mode,
            "n_kept": self.n_kept,
            "n_rep": self.n_rep,
            "histogram": {"edges": list(self.histogram[0]), "masses": list(self.histogram[1])},
        }


def weighted_ks(positions: np.ndarray, weights: np.ndarray, cdf, support: np.ndarray | None = None) -> float:
    """sup_x |F_w(x) − F(x)| for a weighted empirical cdf.

    With a finite support both cdfs are step functions jumping only on it, so
    the sup is taken there; otherwise on both sides of every sample point.
    """
    order = np.argsort(positions, kind="stable")
    xs, w = positions[order], weights[order] / weights.sum()
    if support is not None:
        fw = np.array([w[xs <= k].sum() for k in support])
        return float(np.max(np.abs(fw - cdf(support))))
    right = np.cumsum(w)
    left = right - w
    f = cdf(xs)
    return float(max(np.max(right - f), np.max(f - left)))


def _front(cfg: BranchConfig, traj: Trajectory) -> dict:
    final = traj.final
    if final is None:
        return {"live": math.nan, "D_T": math.nan, "positions": np.empty(0)}
    return {"live": float(len(final)), "D_T": malthusian_d(final, cfg.motion.eigen, cfg.x0, cfg.r, cfg.offspring.m1),
            "positions": final.states.copy()}


def qsd_batch(config: BranchConfig, T: float, n_rep: int, workers: int | None = None) -> ReplicaBatch:
    cfg = config.with_(t_end=float(T))
    return run_replicas(cfg, n_rep, partial(_front, cfg), workers)


def qsd_sample(config: BranchConfig, T: float, n_rep: int, condition="survival", eps: float | None = None,
               mode: str = "pooled", bins: int | Sequence[float] | None = None,
               workers: int | None = None) -> QsdReport:
    """Pool live positions at T over the replicas that meet the condition.

    KS distance is against eigen.nu_cdf when the model has one (None
    otherwise). Histogram masses are normalized to sum to 1.
    """
    cond = Condition.parse(condition, eps)
    if mode not in QSD_MODES:
        raise InvalidParameter(f"qsd_mode must be one of {QSD_MODES}, got {mode!r}")
    batch = qsd_batch(config, T, n_rep, workers)
    motion = config.motion

    ids, chunks = [], []
    for i in batch.usable():
        row = batch.rows[i]
        alive = row["live"] > 0
        keep = alive if cond.kind == "survival" else row["D_T"] > cond.eps
        if keep and alive:
            ids.append(i)
            chunks.append(row["positions"])
    if not ids:
        raise NoSurvivors(f"no replica out of {n_rep} met the condition '{cond.describe()}' at T = {T}")

    positions = np.concatenate(chunks)
    replica_ids = np.concatenate([np.full(len(c), i, dtype=np.int64) for i, c in zip(ids, chunks)])
    if mode == "pooled":
        weights = np.full(len(positions), 1.0 / len(positions))
    else:
        weights = np.concatenate([np.full(len(c), 1.0 / (len(ids) * len(c))) for c in chunks])

    ks = None
    cdf = motion.eigen.nu_cdf
    if cdf is not None:
        support = motion.states() if motion.state_kind == "integer" else None
        if mode == "pooled" and support is None:
            ks = float(kstest(positions, cdf).statistic)
        else:
            ks = weighted_ks(positions, weights, cdf, support)

    edges = _edges(positions, bins, motion.state_kind)
    counts, edges = np.histogram(positions, bins=edges, weights=weights)
    total = counts.sum()
    masses = counts / total if total > 0 else counts
    report = QsdReport(
        pooled_samples=int(len(positions)), ks_distance=ks,
        histogram=(tuple(float(e) for e in edges), tuple(float(m) for m in masses)),
        conditioning=cond.describe(), mode=mode, n_kept=len(ids), n_rep=n_rep,
        replica_ids=replica_ids, positions=positions, weights=weights,
    )
    logger.info("qsd: %d positions from %d/%d replicas (%s), KS = %s", report.pooled_samples, len(ids), n_rep,
                cond.describe(), "n/a" if ks is None else f"{ks:.4f}")
    return report


def _edges(positions: np.ndarray, bins, state_kind: str) -> np.ndarray:
    if bins is not None and not isinstance(bins, int):
        return np.asarray(bins, dtype=float)
    lo, hi = float(positions.min()), float(positions.max())
    if state_kind == "integer":
        return np.arange(math.floor(lo), math.floor(hi) + 2, dtype=float) - 0.5
    n = bins or 50
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n + 1)


def half_split_distance(report: QsdReport) -> float:
    """Two-sample KS between the positions of the first and second half of the kept replicas."""
    kept = np.unique(report.replica_ids)
    if kept.size < 2:
        raise NoSurvivors("need at least two kept replicas to split")
    first = np.isin(report.replica_ids, kept[: kept.size // 2])
    return float(ks_2samp(report.positions[first], report.positions[~first]).statistic)
