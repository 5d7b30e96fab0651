"""model.py — Domain types shared by every module.

State encoding: live states are plain numbers (float for diffusions, int for
chains). Inside sampler arrays an absorbed particle is NaN; outside them the
markers ABSORBED / DEAD are used. Both markers are terminal.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from config import DEFAULT_MAX_POPULATION, DEFAULT_STEP_DT

from .errors import InvalidConfig, InvalidParameter
from .offspring import OffspringLaw


class Marker(enum.Enum):
    ABSORBED = "absorbed"   # state in the absorbing boundary
    DEAD     = "dead"       # graveyard, zero offspring


ABSORBED = Marker.ABSORBED
DEAD     = Marker.DEAD

ParticleState = Union[float, int, Marker]


def is_live(state) -> bool:
    if isinstance(state, Marker):
        return False
    return not math.isnan(state)


def to_marker(value: float) -> ParticleState:
    """Map a sampler value (NaN = absorbed) back to a ParticleState."""
    return ABSORBED if math.isnan(value) else value


@dataclass(frozen=True)
class Interval:
    """Half-open interval [lo, hi); ``hi`` may be +inf, ``lo`` -inf."""
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InvalidParameter(f"interval needs lo < hi, got [{self.lo}, {self.hi})")

    @classmethod
    def parse(cls, value) -> "Interval":
        """Accept [lo, hi] pairs; strings "inf"/"-inf" are allowed for the ends."""
        if isinstance(value, Interval):
            return value
        try:
            lo, hi = value
        except (TypeError, ValueError):
            raise InvalidParameter(f"interval must be a pair [lo, hi], got {value!r}") from None
        return cls(float(lo), float(hi))

    def contains(self, x) -> np.ndarray | bool:
        """Vectorised membership; NaN (absorbed) is never inside."""
        x = np.asarray(x, dtype=float)
        out = (x >= self.lo) & (x < self.hi)
        return out if out.ndim else bool(out)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def as_list(self) -> list[float]:
        return [self.lo, self.hi]


FULL_LINE = Interval(-math.inf, math.inf)


@dataclass(frozen=True)
class EigenData:
    lam: float
    h: Callable[[np.ndarray], np.ndarray]
    nu_mass: Callable[[Interval], float] | None
    p: Callable[[float], float]
    nu_cdf: Callable[[np.ndarray], np.ndarray] | None = None
    normalization_note: str = ""

    def h_values(self, states) -> np.ndarray:
        """h on an array; absorbed (NaN) entries map to 0."""
        x = np.asarray(states, dtype=float)
        out = np.zeros_like(x)
        live = ~np.isnan(x)
        if np.any(live):
            out[live] = self.h(x[live])
        return out


@dataclass(frozen=True)
class EstimatorResult:
    mean: float
    stderr: float
    n: int
    n_eff: float | None = None
    low_ess: bool = False
    analytic: bool = False

    @classmethod
    def from_samples(cls, values, **kw) -> "EstimatorResult":
        v = np.asarray(values, dtype=float)
        n = int(v.size)
        if n == 0:
            return cls(math.nan, math.nan, 0, **kw)
        sd = float(np.std(v, ddof=1)) if n > 1 else 0.0
        return cls(float(np.mean(v)), sd / math.sqrt(n), n, **kw)

    @classmethod
    def exact(cls, value: float) -> "EstimatorResult":
        return cls(float(value), 0.0, 1, analytic=True)

    def scaled(self, factor: float) -> "EstimatorResult":
        return EstimatorResult(self.mean * factor, self.stderr * abs(factor), self.n,
                               self.n_eff, self.low_ess, self.analytic)

    def to_dict(self) -> dict:
        d = {"mean": self.mean, "stderr": self.stderr, "n": self.n}
        if self.n_eff is not None:
            d["n_eff"] = self.n_eff
            d["low_ess"] = self.low_ess
        if self.analytic:
            d["analytic"] = True
        return d


def combined_stderr(*results: EstimatorResult) -> float:
    return math.sqrt(sum(r.stderr ** 2 for r in results))


@dataclass(frozen=True)
class BranchConfig:
    motion: "object"            # core.motions.MotionModel
    offspring: OffspringLaw
    r: float
    x0: float
    t_end: float
    snapshot_times: tuple[float, ...] = ()
    step_dt: float = DEFAULT_STEP_DT
    max_population: int = DEFAULT_MAX_POPULATION
    seed: int = 0
    growth: float = field(init=False)

    def __post_init__(self):
        if not self.r > 0:
            raise InvalidConfig(f"branching rate r must be > 0, got {self.r}")
        if not self.t_end >= 0:
            raise InvalidConfig(f"t_end must be >= 0, got {self.t_end}")
        if not self.step_dt > 0:
            raise InvalidConfig(f"step_dt must be > 0, got {self.step_dt}")
        if self.max_population < 1:
            raise InvalidConfig(f"max_population must be >= 1, got {self.max_population}")
        growth = self.r * (self.offspring.m1 - 1)
        lam = self.motion.eigen.lam
        if not growth > lam:
            raise InvalidConfig(
                f"growth rate must exceed the killing rate: r(m1-1) = {growth} <= lambda = {lam}"
            )
        times = tuple(float(t) for t in self.snapshot_times) or (float(self.t_end),)
        if any(t < 0 for t in times):
            raise InvalidConfig("snapshot_times must be nonnegative")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidConfig("snapshot_times must be strictly increasing")
        if times[-1] > self.t_end:
            raise InvalidConfig(f"snapshot time {times[-1]} exceeds t_end = {self.t_end}")
        object.__setattr__(self, "snapshot_times", times)
        object.__setattr__(self, "growth", growth)

    def with_(self, **changes) -> "BranchConfig":
        """Copy with fields replaced; snapshot_times reset to t_end unless given."""
        kw = {
            "motion": self.motion, "offspring": self.offspring, "r": self.r, "x0": self.x0,
            "t_end": self.t_end, "snapshot_times": self.snapshot_times, "step_dt": self.step_dt,
            "max_population": self.max_population, "seed": self.seed,
        }
        if "t_end" in changes and "snapshot_times" not in changes:
            kw["snapshot_times"] = ()
        kw.update(changes)
        return BranchConfig(**kw)


def snapshot_grid(times: Sequence[float]) -> tuple[float, ...]:
    return tuple(sorted({float(t) for t in times}))
