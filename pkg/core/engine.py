"""engine.py — Branching dynamics ξ_t: simulation of one realization and of replicas.

Each particle carries its own Exp(r) branching clock and its own random
stream keyed by its Ulam–Harris label, so a realization does not depend on
the order particles are processed in. Particles are nevertheless processed in
birth-time order: when a particle born at time b is popped, every particle
alive at b has already been simulated, which gives an exact live count for
the max_population guard.

A particle is alive on [birth, death). Between ring times it moves by
motion.path in equal substeps ≤ step_dt; the segments are cut at snapshot
times so snapshot positions are exact states of the path.
"""
from __future__ import annotations

import bisect
import heapq
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Mapping

import numpy as np

from config import WORKERS

from .errors import BranchError, PopulationOverflow
from .model import BranchConfig, EstimatorResult, Interval
from .rng import CTX_PARTICLE, ROOT, ParticleId, child_id, replica_seed, stream_for
from .utils import make_progress_cb

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Population:
    """Live front ξ_t plus the cumulative tallies needed for χ_t bookkeeping."""
    time: float
    labels: tuple[ParticleId, ...]
    states: np.ndarray
    absorbed_count: int = 0
    dead_count: int = 0
    branched_count: int = 0
    births: int = 1
    absorbed_mass: float = 0.0     # Σ e^{a(t−τ)} over absorption times τ ≤ t

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def particles(self) -> list[tuple[ParticleId, float]]:
        return list(zip(self.labels, self.states.tolist()))

    def count(self, B: Interval | None = None) -> int:
        """ξ_t(B); the whole live front when B is None."""
        if B is None:
            return len(self.labels)
        return int(np.count_nonzero(B.contains(self.states)))

    @property
    def chi_size(self) -> int:
        """Live particles plus the absorbed tally (absorbed particles are not simulated further)."""
        return len(self.labels) + self.absorbed_count

    @property
    def chi_mass(self) -> float:
        """E(|χ_t| | absorption times); each absorbed particle stands for e^{a(t−τ)} descendants, so the mean is e^{at}."""
        return len(self.labels) + self.absorbed_mass


@dataclass(frozen=True)
class Trajectory:
    times: tuple[float, ...]
    snapshots: tuple[Population, ...]
    extinct_time: float | None = None
    overflowed: bool = False

    def at(self, t: float) -> Population | None:
        """Snapshot at time t, or None when it was truncated by an overflow."""
        i = bisect.bisect_left(self.times, t)
        if i >= len(self.snapshots) or abs(self.times[i] - t) > 1e-12:
            return None
        return self.snapshots[i]

    @property
    def final(self) -> Population | None:
        return self.snapshots[-1] if len(self.snapshots) == len(self.times) else None


# ── Single realization ───────────────────────────────────────────────────────

def _advance(motion, x: float, t0: float, t1: float, step_dt: float, stream) -> tuple[float, float | None]:
    """Move one particle from t0 to t1; returns (state, absorption time or None)."""
    dur = t1 - t0
    if dur <= 0:
        return x, None
    n = max(1, math.ceil(dur / step_dt - 1e-9))
    dt = dur / n
    ys = motion.path(x, dt, n, stream)
    nan = np.isnan(ys)
    if nan.any():
        k = int(np.argmax(nan))
        return math.nan, t0 + (k + 1) * dt
    return float(ys[-1]), None


def simulate(config: BranchConfig, strict: bool = False) -> Trajectory:
    """One realization of ξ started from a single particle at x0.

    On overflow the trajectory is returned with ``overflowed=True`` and only
    the snapshots strictly before the overflow time; with ``strict=True``
    PopulationOverflow is raised carrying that trajectory instead.
    """
    motion, law = config.motion, config.offspring
    times = config.snapshot_times
    t_end = config.t_end
    scale = 1.0 / config.r

    snaps: list[list[tuple[ParticleId, float]]] = [[] for _ in times]
    birth_times: list[float] = []
    absorbed_times: list[float] = []
    dead_times: list[float] = []
    branch_times: list[float] = []

    pending = [(0.0, ROOT, float(config.x0))]
    alive_until: list[float] = []      # min-heap of end times of simulated, still-relevant particles
    survivors = 0
    last_end = 0.0
    overflow_at: float | None = None

    while pending:
        b, label, x = heapq.heappop(pending)
        birth_times.append(b)

        while alive_until and alive_until[0] <= b:
            heapq.heappop(alive_until)
        if len(alive_until) + 1 > config.max_population:
            overflow_at = b
            break

        stream = stream_for(config.seed, label, CTX_PARTICLE)
        death = b + stream.exponential(scale)
        stop = min(death, t_end)

        cur_t, cur, absorbed_at = b, x, None
        for j in range(bisect.bisect_left(times, b), len(times)):
            s = times[j]
            if s >= death:
                break
            cur, absorbed_at = _advance(motion, cur, cur_t, s, config.step_dt, stream)
            cur_t = s
            if absorbed_at is not None:
                break
            snaps[j].append((label, cur))
        if absorbed_at is None:
            cur, absorbed_at = _advance(motion, cur, cur_t, stop, config.step_dt, stream)

        if absorbed_at is not None:
            absorbed_times.append(absorbed_at)
            last_end = max(last_end, absorbed_at)
            heapq.heappush(alive_until, absorbed_at)
            continue
        if death > t_end:
            survivors += 1
            heapq.heappush(alive_until, math.inf)
            continue

        heapq.heappush(alive_until, death)
        last_end = max(last_end, death)
        k = law.sample(stream)
        if k == 0:
            dead_times.append(death)
        else:
            branch_times.append(death)
            for i in range(k):
                heapq.heappush(pending, (death, child_id(label, i), cur))

    kept = len(times) if overflow_at is None else bisect.bisect_left(times, overflow_at)
    births = np.sort(np.array(birth_times))
    absorbed = np.sort(np.array(absorbed_times))
    dead = np.sort(np.array(dead_times))
    branched = np.sort(np.array(branch_times))

    snapshots = []
    for j in range(kept):
        s = times[j]
        entries = sorted(snaps[j])
        snapshots.append(Population(
            time=s,
            labels=tuple(lab for lab, _ in entries),
            states=np.array([v for _, v in entries], dtype=float),
            absorbed_count=int(np.searchsorted(absorbed, s, side="right")),
            dead_count=int(np.searchsorted(dead, s, side="right")),
            branched_count=int(np.searchsorted(branched, s, side="right")),
            births=int(np.searchsorted(births, s, side="right")),
            absorbed_mass=float(np.exp(config.growth * (s - absorbed[absorbed <= s])).sum()),
        ))

    overflowed = overflow_at is not None
    extinct_time = None if (overflowed or survivors) else last_end
    traj = Trajectory(times=times, snapshots=tuple(snapshots), extinct_time=extinct_time, overflowed=overflowed)
    if overflowed:
        logger.warning("population overflow (> %d live) at t=%.4g, seed=%d", config.max_population, overflow_at,
                       config.seed)
        if strict:
            raise PopulationOverflow(
                f"live population would exceed max_population={config.max_population} at t={overflow_at:.6g}",
                trajectory=traj,
            )
    return traj


# ── Replicas ─────────────────────────────────────────────────────────────────

Reducer = Callable[[Trajectory], Mapping[str, float]]


@dataclass
class ReplicaBatch:
    """Per-replica reductions in replica order, plus failure / overflow tallies."""
    rows: list[dict | None]
    overflowed: list[bool]
    errors: dict[int, str] = field(default_factory=dict)

    @property
    def n_rep(self) -> int:
        return len(self.rows)

    @property
    def failures(self) -> int:
        return len(self.errors)

    @property
    def overflow_count(self) -> int:
        return sum(self.overflowed)

    def usable(self) -> list[int]:
        return [i for i, row in enumerate(self.rows) if row is not None and not self.overflowed[i]]

    def values(self, key: str) -> np.ndarray:
        return np.array([self.rows[i][key] for i in self.usable()], dtype=float)

    def estimate(self, key: str) -> EstimatorResult:
        v = self.values(key)
        return EstimatorResult.from_samples(v[~np.isnan(v)])


def _replica(config: BranchConfig, reducer: Reducer, i: int) -> tuple[dict | None, bool, str | None]:
    cfg = config.with_(seed=replica_seed(config.seed, i))
    try:
        traj = simulate(cfg)
        return dict(reducer(traj)), traj.overflowed, None
    except BranchError as e:
        return None, False, str(e)


def run_replicas(config: BranchConfig, n_rep: int, reducer: Reducer, workers: int | None = None) -> ReplicaBatch:
    """Run n_rep independent realizations (replica i uses replica_seed(seed, i)).

    The reduction of replica i lands in slot i whatever the worker count, so
    merged statistics are identical for 1 or N workers. With more than one
    worker, replicas run in a process pool; config and reducer must then be
    picklable (module-level functions, or functools.partial over them).
    """
    if n_rep < 1:
        raise ValueError(f"n_rep must be >= 1, got {n_rep}")
    workers = max(1, int(workers or WORKERS))
    progress = make_progress_cb(n_rep, label=f"{config.motion.name} replicas")
    task = partial(_replica, config, reducer)

    results = []
    if workers == 1 or n_rep == 1:
        for i in range(n_rep):
            results.append(task(i))
            progress()
    else:
        chunk = max(1, n_rep // (workers * 8))
        with ProcessPoolExecutor(max_workers=min(workers, n_rep)) as pool:
            for out in pool.map(task, range(n_rep), chunksize=chunk):
                results.append(out)
                progress()

    batch = ReplicaBatch(rows=[r[0] for r in results], overflowed=[r[1] for r in results],
                         errors={i: r[2] for i, r in enumerate(results) if r[2] is not None})
    if batch.failures:
        logger.warning("%d/%d replicas failed", batch.failures, n_rep)
    if batch.overflow_count:
        logger.warning("%d/%d replicas overflowed and are excluded from estimates", batch.overflow_count, n_rep)
    return batch
