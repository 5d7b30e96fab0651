"""oracle.py — Deterministic reference values from closed-form transition laws.

Everything here is quadrature or closed form; nothing draws random numbers.
These numbers are the yardsticks the Monte Carlo estimators are held to.
"""
from __future__ import annotations

import logging
import math
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.stats import norm

from config import QUAD_REL_TOL, QUAD_TAIL_MASS

from .errors import ZeroEigenfunction
from .model import FULL_LINE, Interval
from .motions import ErgodicCTMC, KilledDriftedBM, KilledRecurrentOU, MotionModel, TransientOU

logger = logging.getLogger(__name__)


def has_density(motion: MotionModel) -> bool:
    return motion.density is not None


def expectation(motion: MotionModel, x: float, t: float, f: Callable, B: Interval = FULL_LINE) -> float:
    """E_x[f(X_t) 1_B(X_t); t < τ] from the transition density (or the chain's matrix exponential).

    f takes and returns arrays. The integration range is B intersected with
    the model's window, so indicator jumps sit on the endpoints.
    """
    if t <= 0:
        return float(f(np.array([x]))[0]) if B.contains(x) else 0.0
    if isinstance(motion, ErgodicCTMC):
        ys = motion.states()
        row = motion.transition_row(int(x), t)
        inside = B.contains(ys)
        return float(np.dot(row[inside], f(ys[inside])))
    if not has_density(motion):
        raise ValueError(f"{motion.name} has no closed-form transition density")

    lo, hi = motion.window(x, t)
    lo, hi = max(lo, B.lo), min(hi, B.hi)
    if not lo < hi:
        return 0.0
    integrand = lambda y: motion.density(x, y, t) * float(f(np.array([y]))[0])  # noqa: E731
    value, err = quad(integrand, lo, hi, epsrel=QUAD_REL_TOL, epsabs=QUAD_TAIL_MASS, limit=500)
    logger.debug("quad %s x=%g t=%g on [%g, %g]: %.12g ± %.2g", motion.name, x, t, lo, hi, value, err)
    return float(value)


def _one(y):
    return np.ones_like(np.asarray(y, dtype=float))


def prob_in(motion: MotionModel, x: float, B: Interval, t: float) -> float:
    """P_x(X_t ∈ B, t < τ)."""
    return expectation(motion, x, t, _one, B)


def survival(motion: MotionModel, x: float, t: float) -> float:
    return prob_in(motion, x, FULL_LINE, t)


# ── E_x(M_s²) ────────────────────────────────────────────────────────────────
# Computed in log space: for killed BM the factor e^{c²s} overflows a double
# long before the Φ horizon search gives up.

def _positive_second_moment(mu: float, v: float) -> float:
    """E[Y²; Y > 0] for Y ~ N(mu, v)."""
    sd = math.sqrt(v)
    z = mu / sd
    return (mu * mu + v) * norm.cdf(z) + mu * sd * norm.pdf(z)


def _log(v: float) -> float:
    return math.log(v) if v > 0 else -math.inf


def exp_or_inf(log_value: float) -> float:
    """exp that saturates at inf instead of raising OverflowError."""
    return math.exp(log_value) if log_value < 709.0 else math.inf


def _require_h(motion: MotionModel, x: float) -> float:
    h_x = float(motion.eigen.h(np.array([x]))[0])
    if not h_x > 0:
        raise ZeroEigenfunction(f"h({x}) = {h_x}: M is undefined from an absorbing state")
    return h_x


def log_m_second_moment_closed(motion: MotionModel, x: float, s: float) -> float | None:
    """log E_x(M_s²) in closed form where one is known, else None."""
    _require_h(motion, x)
    if s <= 0 or isinstance(motion, ErgodicCTMC):
        return 0.0
    if isinstance(motion, KilledDriftedBM):
        c = motion.c
        top = math.exp(2 * c * x) * _positive_second_moment(x + c * s, s) - _positive_second_moment(c * s - x, s)
        return c * c * s - 2 * c * x + _log(top) - 2 * math.log(x)
    if isinstance(motion, KilledRecurrentOU):
        lam = motion.lam
        mu = x * math.exp(-lam * s)
        v = -math.expm1(-2 * lam * s) / (2 * lam)
        z = mu / math.sqrt(v)
        odd = (mu * mu + v) * (2 * norm.cdf(z) - 1) + 2 * mu * math.sqrt(v) * norm.pdf(z)
        return 2 * lam * s + _log(odd) - 2 * math.log(x)
    if isinstance(motion, TransientOU):
        lam, k = motion.lam, 2 * motion.lam / motion.sigma2
        rest = 2.0 - math.exp(-2 * lam * s)          # spread / grow
        return 2 * lam * s + k * x * x * (1.0 - 1.0 / rest) - 0.5 * (2 * lam * s + math.log(rest))
    return None


def m_second_moment_closed(motion: MotionModel, x: float, s: float) -> float | None:
    """E_x(M_s²) in closed form where one is known, else None; inf past double range."""
    log_value = log_m_second_moment_closed(motion, x, s)
    return None if log_value is None else exp_or_inf(log_value)


def log_m_second_moment_quad(motion: MotionModel, x: float, s: float) -> float:
    """log E_x(M_s²) with E_x(M_s²) = e^{2λs} ∫ h²(y) q_s(x, y) dy / h²(x) by quadrature."""
    eigen = motion.eigen
    h_x = _require_h(motion, x)
    if s <= 0:
        return 0.0
    moment = expectation(motion, x, s, lambda y: eigen.h(y) ** 2)
    return 2 * eigen.lam * s + _log(moment) - 2 * math.log(h_x)


def m_second_moment_quad(motion: MotionModel, x: float, s: float) -> float:
    return exp_or_inf(log_m_second_moment_quad(motion, x, s))
