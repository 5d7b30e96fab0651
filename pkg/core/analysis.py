"""analysis.py — Malthusian martingale D_t, the variance Φ_x, W_t and ν_t statistics.

Φ_x = (m2 − m1) ∫₀^∞ E_x(M_s²) r e^{−r(m1−1)s} ds is finite exactly when the
L² law of large numbers holds, so its divergence is a result, never an error.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad, simpson

from config import (
    DEFAULT_STEP_DT,
    PHI_MC_GRID,
    PHI_SLOPE_MARGIN,
    PHI_T_MAX,
    PHI_TOL,
    QUAD_REL_TOL,
)

from .engine import Population
from .errors import EmptyDenominator, InvalidConfig, InvalidParameter, NoSurvivors, ZeroEigenfunction
from .model import EigenData, Interval
from .motions import MotionModel
from .oracle import exp_or_inf, has_density, log_m_second_moment_closed, log_m_second_moment_quad
from .rng import CTX_SPINE, ROOT, stream_for
from .spine import require_h
from .utils import LRUCache

logger = logging.getLogger(__name__)

_m2_cache = LRUCache(max_size=20_000)

MIN_SURVIVING = 10


@dataclass(frozen=True)
class QuadratureResult:
    value: float | None
    error_estimate: float
    diverged: bool
    truncation_T: float
    method: str = "quadrature"

    def to_dict(self) -> dict:
        return {
            "value": None if self.diverged else self.value,
            "diverged": self.diverged,
            "error_estimate": self.error_estimate,
            "truncation_T": self.truncation_T,
            "method": self.method,
        }


# ── D_t, W_t, ν_t ────────────────────────────────────────────────────────────

def malthusian_d(pop: Population, eigen: EigenData, x0: float, r: float, m1: float) -> float:
    """D_t = Σ_{u ∈ ξ_t} h(u_t) e^{−(r(m1−1)−λ)t} / h(x0); 0 on an empty front."""
    h_x0 = float(eigen.h_values(np.array([x0], dtype=float))[0])
    if not h_x0 > 0:
        raise ZeroEigenfunction(f"h(x0) = {h_x0}: D is defined only from states with h > 0")
    if len(pop) == 0:
        return 0.0
    discount = math.exp(-(r * (m1 - 1) - eigen.lam) * pop.time)
    return float(eigen.h_values(pop.states).sum()) * discount / h_x0


def w_statistic(pop: Population, B: Interval, B_prime: Interval, expected_B_prime: float) -> float:
    """W_t(B, B') = ξ_t(B) / E_x ξ_t(B')."""
    if not expected_B_prime > 0:
        raise InvalidParameter(f"E_x xi_t(B') must be > 0, got {expected_B_prime}")
    return pop.count(B) / expected_B_prime


def empirical_ratio(pop: Population, B: Interval, B_prime: Interval) -> float:
    """ν_t(B, B') = ξ_t(B) / ξ_t(B')."""
    den = pop.count(B_prime)
    if den == 0:
        raise EmptyDenominator(f"xi_t(B') = 0 for B' = {B_prime.as_list()} at t = {pop.time}")
    return pop.count(B) / den


def phi_ergodic(m1: float, m2: float) -> float:
    """Φ for motions with h ≡ 1 and λ = 0: (m2 − m1)/(m1 − 1)."""
    return (m2 - m1) / (m1 - 1)


# ── E_x(M_s²) as a function of s ─────────────────────────────────────────────

def _log_m2_function(motion: MotionModel, x: float) -> tuple[Callable[[float], float], str] | None:
    """Deterministic s ↦ log E_x(M_s²) when closed form or quadrature is available."""
    require_h(motion, x)
    if log_m_second_moment_closed(motion, x, 1.0) is not None:
        return (lambda s: log_m_second_moment_closed(motion, x, s)), "closed_form"
    if has_density(motion):
        def fn(s: float) -> float:
            key = (motion.name, repr(motion.params), x, s)
            return _m2_cache.get_or_compute(key, lambda: log_m_second_moment_quad(motion, x, s))
        return fn, "quadrature"
    return None


def _m2_grid_mc(motion: MotionModel, x: float, s_grid: np.ndarray, n_mc: int, seed: int,
                step_dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """E_x(M_s²) on an increasing grid from one batch of paths: (means, stderrs, surviving counts)."""
    h_x = require_h(motion, x)
    stream = stream_for(seed, ROOT, CTX_SPINE)
    ys = np.full(n_mc, float(x))
    means, errs = np.empty(len(s_grid)), np.empty(len(s_grid))
    live = np.empty(len(s_grid), dtype=np.int64)
    prev = 0.0
    for k, s in enumerate(s_grid):
        dur = s - prev
        if dur > 0:
            ys = motion.propagate(ys, dur, dur if motion.exact_step else step_dt, stream)
        prev = s
        m = motion.eigen.h_values(ys) * math.exp(motion.eigen.lam * s) / h_x
        sq = m * m
        means[k] = sq.mean()
        errs[k] = sq.std(ddof=1) / math.sqrt(n_mc) if n_mc > 1 else 0.0
        live[k] = int(np.count_nonzero(m > 0))
    return means, errs, live


def _log_slope(s: np.ndarray, logs: np.ndarray) -> float:
    """Fitted growth rate of exp(logs) over s; inf when any value is 0 or out of range."""
    if not np.all(np.isfinite(logs)):
        return math.inf
    return float(np.polyfit(s, logs, 1)[0])


def _tail_slope(s: np.ndarray, values: np.ndarray) -> float:
    """Fitted exponential growth rate of values over s."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return _log_slope(s, np.log(values))


# ── Φ_x ──────────────────────────────────────────────────────────────────────

def phi_quadrature(motion: MotionModel, x: float, r: float, m1: float, m2: float, tol: float = PHI_TOL,
                   n_mc: int = 10_000, seed: int = 0, step_dt: float = DEFAULT_STEP_DT,
                   t_max: float = PHI_T_MAX) -> QuadratureResult:
    """Φ_x with a divergence verdict.

    The horizon T grows geometrically. At each T the growth rate of
    log E_x(M_s²) is fitted over the last decade [T/10, T]: a rate below
    r(m1−1) − margin lets the exponential tail bound decide whether T is far
    enough; a rate at or above it pushes T further, and persisting up to
    t_max means divergence.
    """
    a = r * (m1 - 1)
    if not a > motion.eigen.lam:
        raise InvalidConfig(f"growth rate must exceed the killing rate: r(m1-1) = {a} <= lambda = {motion.eigen.lam}")
    scale = (m2 - m1) * r
    found = _log_m2_function(motion, x)
    if found is None:
        return _phi_monte_carlo(motion, x, a, scale, tol, n_mc, seed, step_dt, t_max)
    log_m2, method = found

    T = max(10.0, 10.0 / a)
    while True:
        s = np.linspace(T / 10, T, 50)
        slope = _log_slope(s, np.array([log_m2(v) for v in s]))
        if slope < a - PHI_SLOPE_MARGIN:
            tail = scale * exp_or_inf(log_m2(T) - a * T) / (a - slope)
            if tail < tol / 2:
                break
        if T >= t_max:
            logger.warning("Phi diverged for %s x=%g: growth rate %.6g vs r(m1-1) = %.6g at T = %g",
                           motion.name, x, slope, a, T)
            return QuadratureResult(None, math.nan, True, T, method)
        T = min(T * 1.5, t_max)

    integrand = lambda v: scale * exp_or_inf(log_m2(v) - a * v)  # noqa: E731
    value, err = quad(integrand, 0.0, T, epsabs=tol / 2, epsrel=QUAD_REL_TOL, limit=1000)
    logger.info("Phi(%s, x=%g) = %.12g ± %.2g (T = %g, %s)", motion.name, x, value, err + tail, T, method)
    return QuadratureResult(float(value), float(err + tail), False, T, method)


def _phi_monte_carlo(motion, x, a, scale, tol, n_mc, seed, step_dt, t_max) -> QuadratureResult:
    """Φ from Monte Carlo values of E_x(M_s²) on a fixed grid (Simpson's rule).

    The horizon is sized for E_x(M_s²) growing like e^{λs}, then cut back to
    the last grid point where at least MIN_SURVIVING paths are still alive;
    beyond it the fitted exponential rate bounds the tail. error_estimate is
    the propagated Monte Carlo standard error plus that tail bound.
    """
    lam = motion.eigen.lam
    T = min(t_max, max(10.0, math.log(2 * scale / tol) / (a - lam)))
    s = np.linspace(0.0, T, PHI_MC_GRID)
    means, errs, live = _m2_grid_mc(motion, x, s, n_mc, seed, step_dt)
    keep = int(np.nonzero(live >= MIN_SURVIVING)[0][-1]) + 1 if live[0] >= MIN_SURVIVING else 1
    if keep < 3:
        raise NoSurvivors(f"fewer than {MIN_SURVIVING} of {n_mc} paths survive the first grid step; raise n_mc")
    s, means, errs = s[:keep], means[:keep], errs[:keep]
    T = float(s[-1])
    last = s >= T / 10
    slope = _tail_slope(s[last], means[last])
    if slope >= a - PHI_SLOPE_MARGIN:
        logger.warning("Phi diverged for %s x=%g (Monte Carlo integrand): rate %.4g >= %.4g", motion.name, x,
                       slope, a)
        return QuadratureResult(None, math.nan, True, T, "monte_carlo")
    disc = scale * np.exp(-a * s)
    value = simpson(means * disc, x=s)
    tail = scale * means[-1] * math.exp(-a * T) / (a - slope)
    ds = s[1] - s[0]
    mc_err = float(np.sqrt(np.sum((errs * disc * ds) ** 2)))
    return QuadratureResult(float(value + tail), mc_err + tail, False, T, "monte_carlo")


def phi_integrand_table(motion: MotionModel, x: float, r: float, m1: float, m2: float, T: float,
                        n_points: int = 101, n_mc: int = 10_000, seed: int = 0,
                        step_dt: float = DEFAULT_STEP_DT) -> list[tuple[float, float, float]]:
    """(s, E_x(M_s²), integrand) rows on [0, T] for the phi CSV."""
    a = r * (m1 - 1)
    scale = (m2 - m1) * r
    s = np.linspace(0.0, T, n_points)
    found = _log_m2_function(motion, x)
    if found is not None:
        logs = np.array([found[0](v) for v in s])
    else:
        means, _, _ = _m2_grid_mc(motion, x, s, n_mc, seed, step_dt)
        with np.errstate(divide="ignore"):
            logs = np.log(means)
    return [(float(v), exp_or_inf(lm), scale * exp_or_inf(lm - a * v)) for v, lm in zip(s, logs)]


def d_second_moment_analytic(motion: MotionModel, x: float, r: float, m1: float, m2: float, t: float,
                             n_mc: int = 10_000, seed: int = 0, step_dt: float = DEFAULT_STEP_DT) -> float:
    """E_x(D_t²) = E_x(M_t²)e^{−at} + (m2 − m1) r ∫₀^t E_x(M_s²) e^{−as} ds, a = r(m1−1)."""
    if t <= 0:
        return 1.0
    a = r * (m1 - 1)
    scale = (m2 - m1) * r
    found = _log_m2_function(motion, x)
    if found is not None:
        log_m2 = found[0]
        integral, _ = quad(lambda v: exp_or_inf(log_m2(v) - a * v), 0.0, t, epsrel=QUAD_REL_TOL, limit=500)
        return float(exp_or_inf(log_m2(t) - a * t) + scale * integral)
    s = np.linspace(0.0, t, PHI_MC_GRID)
    means, _, _ = _m2_grid_mc(motion, x, s, n_mc, seed, step_dt)
    return float(means[-1] * math.exp(-a * t) + scale * simpson(means * np.exp(-a * s), x=s))
