"""spine.py — Many-to-few machinery: one- and two-spine estimators, h-transform weighting, s_B.

Single-particle batches are drawn from ``stream_for(seed, label, CTX_SPINE)``
so they never share randomness with the branching engine; each grid point of
a curve uses its own label and is independent of the others.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from config import DEFAULT_STEP_DT, LOW_ESS_THRESHOLD

from .errors import MissingNuMass, ZeroEigenfunction
from .model import EstimatorResult, Interval
from .motions import MotionModel
from .offspring import OffspringLaw
from .oracle import has_density, m_second_moment_closed, m_second_moment_quad, prob_in
from .rng import CTX_SPINE, ROOT, stream_for

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TwoSpineSample:
    split_time: float
    x1: float
    x2: float
    weight: float


@dataclass(frozen=True)
class SBDiagnostic:
    t: float
    estimate: float
    stderr: float
    n_eff: float | None = None


# ── Single spine ─────────────────────────────────────────────────────────────

def _substep(motion: MotionModel, t: float, step_dt: float) -> float:
    return t if motion.exact_step else step_dt


def positions(motion: MotionModel, x: float, t: float, n: int, stream, step_dt: float = DEFAULT_STEP_DT) -> np.ndarray:
    """n independent copies of X_t started at x (NaN where absorbed)."""
    return motion.propagate(np.full(n, float(x)), t, _substep(motion, t, step_dt), stream)


def require_h(motion: MotionModel, x: float) -> float:
    if math.isnan(x):
        raise ZeroEigenfunction("start state is absorbed: h = 0")
    h_x = float(motion.eigen.h_values(np.array([x]))[0])
    if not h_x > 0:
        raise ZeroEigenfunction(f"h({x}) = {h_x}: start state must have h > 0")
    return h_x


def many_to_one(motion: MotionModel, x: float, B: Interval, t: float, r: float, m1: float,
                n_mc: int = 10_000, seed: int = 0, step_dt: float = DEFAULT_STEP_DT) -> EstimatorResult:
    """E_x ξ_t(B) = e^{r(m1−1)t} P_x(X_t ∈ B); quadrature when the motion has a density."""
    growth = math.exp(r * (m1 - 1) * t)
    if t <= 0:
        return EstimatorResult.exact(float(B.contains(x)))
    if has_density(motion):
        return EstimatorResult.exact(growth * prob_in(motion, x, B, t))
    ys = positions(motion, x, t, n_mc, stream_for(seed, ROOT, CTX_SPINE), step_dt)
    return EstimatorResult.from_samples(growth * B.contains(ys))


def h_transform_expectation(motion: MotionModel, x: float, f: Callable[[np.ndarray], np.ndarray], t: float,
                            n_mc: int = 10_000, seed: int = 0, step_dt: float = DEFAULT_STEP_DT,
                            stream=None) -> EstimatorResult:
    """Ẽ_x f(X_t) = (e^{λt}/h(x)) E_x[h(X_t) f(X_t)] by importance weighting.

    Absorbed paths carry weight 0. The result carries the effective sample
    size (Σw)²/Σw² of the weights h(X_t)e^{λt}/h(x) and a low-ESS flag.
    """
    h_x = require_h(motion, x)
    if t <= 0:
        return EstimatorResult.exact(float(np.asarray(f(np.array([float(x)])))[0]))
    stream = stream if stream is not None else stream_for(seed, ROOT, CTX_SPINE)
    ys = positions(motion, x, t, n_mc, stream, step_dt)
    w = motion.eigen.h_values(ys) * math.exp(motion.eigen.lam * t) / h_x
    values = np.zeros_like(w)
    live = w > 0
    if live.any():
        values[live] = w[live] * np.asarray(f(ys[live]), dtype=float)
    total, sq = float(w.sum()), float(np.dot(w, w))
    n_eff = total * total / sq if sq > 0 else 0.0
    low = n_eff < LOW_ESS_THRESHOLD
    if low:
        logger.warning("low effective sample size %.1f (< %g) for %s at t=%g", n_eff, LOW_ESS_THRESHOLD,
                       motion.name, t)
    return EstimatorResult.from_samples(values, n_eff=n_eff, low_ess=low)


def _indicator_over_h(motion: MotionModel, B: Interval):
    def f(ys):
        h = motion.eigen.h_values(ys)
        out = np.zeros_like(h)
        ok = (h > 0) & B.contains(ys)
        out[ok] = 1.0 / h[ok]
        return out
    return f


def s_b_curve(motion: MotionModel, x: float, B: Interval, t_grid: Sequence[float], n_mc: int = 10_000,
              seed: int = 0, step_dt: float = DEFAULT_STEP_DT) -> list[SBDiagnostic]:
    """ŝ_B(x, t) = Ẽ_x(1_B/h (X_t))/p(t) − ν(B) along t_grid."""
    eigen = motion.eigen
    if eigen.nu_mass is None:
        raise MissingNuMass(f"{motion.name} has no nu_mass; s_B needs nu(B)")
    nu_B = eigen.nu_mass(B)
    f = _indicator_over_h(motion, B)
    out = []
    for j, t in enumerate(t_grid):
        res = h_transform_expectation(motion, x, f, t, n_mc, step_dt=step_dt,
                                      stream=stream_for(seed, (j,), CTX_SPINE))
        p = eigen.p(t) if t > 0 else 1.0
        out.append(SBDiagnostic(t=float(t), estimate=res.mean / p - nu_B, stderr=res.stderr / p, n_eff=res.n_eff))
    return out


def s_b_reference(motion: MotionModel, x: float, B: Interval, t: float) -> float:
    """s_B(x, t) by quadrature of the transition density."""
    eigen = motion.eigen
    if eigen.nu_mass is None:
        raise MissingNuMass(f"{motion.name} has no nu_mass; s_B needs nu(B)")
    h_x = require_h(motion, x)
    p = eigen.p(t) if t > 0 else 1.0
    return math.exp(eigen.lam * t) * prob_in(motion, x, B, t) / (h_x * p) - eigen.nu_mass(B)


def m_second_moment(motion: MotionModel, x: float, s: float, n_mc: int = 10_000, seed: int = 0,
                    step_dt: float = DEFAULT_STEP_DT) -> EstimatorResult:
    """E_x(M_s²) = e^{2λs} E_x h²(X_s) / h²(x): closed form, else quadrature, else Monte Carlo."""
    h_x = require_h(motion, x)
    if s <= 0:
        return EstimatorResult.exact(1.0)
    closed = m_second_moment_closed(motion, x, s)
    if closed is not None:
        return EstimatorResult.exact(closed)
    if has_density(motion):
        return EstimatorResult.exact(m_second_moment_quad(motion, x, s))
    ys = positions(motion, x, s, n_mc, stream_for(seed, ROOT, CTX_SPINE), step_dt)
    m = motion.eigen.h_values(ys) * math.exp(motion.eigen.lam * s) / h_x
    return EstimatorResult.from_samples(m * m)


# ── Two spines ───────────────────────────────────────────────────────────────

def _move(motion: MotionModel, x: float, dur: float, stream, step_dt: float) -> float:
    if dur <= 0 or math.isnan(x):
        return x
    dt = _substep(motion, dur, step_dt)
    n = max(1, math.ceil(dur / dt - 1e-9))
    return float(motion.path(x, dur / n, n, stream)[-1])


def sample_two_spine(motion: MotionModel, x: float, t: float, r: float, offspring: OffspringLaw, n_mc: int,
                     stream, step_dt: float = DEFAULT_STEP_DT) -> list[TwoSpineSample]:
    """Coupled pairs: one path until E ∧ t with E ~ Exp((m2−m1)r), independent copies afterwards.

    The weight is e^{κ(E∧t)} with κ = (Var(m) + (m1−1)²) r = (m2 − 2m1 + 1) r.
    """
    split_rate = (offspring.m2 - offspring.m1) * r
    kappa = (offspring.m2 - 2 * offspring.m1 + 1) * r
    out = []
    for _ in range(n_mc):
        split = min(stream.exponential(1.0 / split_rate), t)
        shared = _move(motion, float(x), split, stream, step_dt)
        if split >= t:
            x1 = x2 = shared
        else:
            x1 = _move(motion, shared, t - split, stream, step_dt)
            x2 = _move(motion, shared, t - split, stream, step_dt)
        out.append(TwoSpineSample(split_time=split, x1=x1, x2=x2, weight=math.exp(kappa * split)))
    return out


def two_spine_pair_moment(motion: MotionModel, x: float, f: Callable, g: Callable, t: float, r: float,
                          offspring: OffspringLaw, n_mc: int = 10_000, seed: int = 0,
                          step_dt: float = DEFAULT_STEP_DT) -> EstimatorResult:
    """E_x Σ_{u,v ∈ ξ_t} f(u_t) g(v_t) by the many-to-two identity (pairs with u = v included).

    f and g take arrays and must give 0 on NaN (absorbed) entries.
    """
    growth = math.exp(2 * r * (offspring.m1 - 1) * t)
    if t <= 0:
        x_arr = np.array([float(x)])
        return EstimatorResult.exact(float(f(x_arr)[0] * g(x_arr)[0]))
    samples = sample_two_spine(motion, x, t, r, offspring, n_mc, stream_for(seed, ROOT, CTX_SPINE), step_dt)
    x1 = np.array([s.x1 for s in samples])
    x2 = np.array([s.x2 for s in samples])
    w = np.array([s.weight for s in samples])
    f1 = np.nan_to_num(np.asarray(f(x1), dtype=float))
    g2 = np.nan_to_num(np.asarray(g(x2), dtype=float))
    return EstimatorResult.from_samples(growth * w * f1 * g2)


def two_spine_second_moment(motion: MotionModel, x: float, B: Interval, t: float, r: float,
                            offspring: OffspringLaw, n_mc: int = 10_000, seed: int = 0,
                            step_dt: float = DEFAULT_STEP_DT) -> EstimatorResult:
    """E_x ξ_t(B)², the f = g = 1_B case."""
    ind = lambda ys: B.contains(ys).astype(float)  # noqa: E731
    return two_spine_pair_moment(motion, x, ind, ind, t, r, offspring, n_mc, seed, step_dt)


# ── Pure branching closed forms ──────────────────────────────────────────────

def yule_first_moment(t: float, r: float, offspring: OffspringLaw) -> float:
    """E|ξ_t| without motion or killing: e^{r(m1−1)t}."""
    return math.exp(r * (offspring.m1 - 1) * t)


def yule_second_moment(t: float, r: float, offspring: OffspringLaw) -> float:
    """E|ξ_t|² without motion or killing.

    s' = 2a s + r c e^{at}, s(0) = 1, with a = r(m1−1), c = E(m−1)² = m2 − 2m1 + 1.
    """
    a = r * (offspring.m1 - 1)
    c = offspring.m2 - 2 * offspring.m1 + 1
    return math.exp(2 * a * t) * (1 + r * c * -math.expm1(-a * t) / a)

