"""motions.py — Underlying motions with transition samplers and eigen-data.

Two families:
  GaussianMotion — one-dimensional linear diffusions whose step is an exact
                   Gaussian AR(1) transition y = a·x + b + s·Z, with optional
                   killing at 0 decided by a bridge-crossing draw.
  JumpMotion     — integer-valued chains simulated jump by jump (exact).

Sampler arrays carry NaN for absorbed particles. Every model is immutable;
samplers are pure given the random stream passed in.
"""
from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.signal import lfilter
from scipy.sparse.csgraph import connected_components
from scipy.stats import gamma, norm

from config import NU_TOLERANCE

from .errors import InvalidGenerator, InvalidParameter
from .model import EigenData, Interval, ParticleState, is_live, to_marker

logger = logging.getLogger(__name__)

_SQRT_2PI = math.sqrt(2 * math.pi)


# ── Base ─────────────────────────────────────────────────────────────────────

class MotionModel(ABC):
    """An absorbed Markov kernel bundled with its eigen-data."""

    name: str
    eigen: EigenData
    exact_step: bool
    state_kind: str          # "real" | "integer"
    params: dict
    density: Callable[[float, float, float], float] | None = None
    n_states: int | None = None

    @abstractmethod
    def step(self, states: np.ndarray, dt: float, rng) -> np.ndarray:
        """One transition of length dt for every entry (independent particles)."""

    @abstractmethod
    def path(self, x: float, dt: float, n: int, stream) -> np.ndarray:
        """States of a single particle at dt, 2dt, …, n·dt (NaN once absorbed)."""

    def sampler(self, state: ParticleState, dt: float, stream) -> ParticleState:
        if not is_live(state):
            return state
        return to_marker(float(self.path(float(state), dt, 1, stream)[-1]))

    def propagate(self, states, t: float, step_dt: float, rng) -> np.ndarray:
        """Advance an array of independent particles by t in equal substeps ≤ step_dt."""
        x = np.array(states, dtype=float)
        if t <= 0:
            return x
        n = max(1, math.ceil(t / step_dt - 1e-9))
        dt = t / n
        for _ in range(n):
            x = self.step(x, dt, rng)
        return x

    def window(self, x: float, t: float) -> tuple[float, float]:
        """Integration range holding all but a negligible tail of the law of X_t (and its h²-tilt)."""
        return (-math.inf, math.inf)

    def states(self) -> np.ndarray | None:
        """Finite state space, when there is one."""
        return None

    def __reduce__(self):
        # eigen-data holds closures; rebuild from the public parameters instead
        return build_model, (self.name, self.params)

    def describe(self) -> dict:
        return {"name": self.name, **self.params}


# ── Gaussian diffusions ──────────────────────────────────────────────────────

class GaussianMotion(MotionModel):
    state_kind = "real"
    killed = False

    @abstractmethod
    def coefficients(self, dt: float) -> tuple[float, float, float]:
        """(a, b, s) of the exact step y = a·x + b + s·Z."""

    def crossing_rate(self, dt: float) -> float:
        """κ with P(hit 0 during the step | x, y > 0) = exp(−κ·x·y)."""
        return 0.0

    def step(self, states, dt, rng):
        x = np.asarray(states, dtype=float)
        out = np.full_like(x, np.nan)
        live = ~np.isnan(x)
        xl = x[live]
        a, b, s = self.coefficients(dt)
        y = a * xl + b + s * rng.standard_normal(xl.size)
        if self.killed:
            u = rng.random(xl.size)
            with np.errstate(over="ignore"):
                hit = (y <= 0) | (u < np.exp(-self.crossing_rate(dt) * xl * np.maximum(y, 0.0)))
            y[hit] = np.nan
        out[live] = y
        return out

    def path(self, x, dt, n, stream):
        if n <= 0:
            return np.empty(0)
        if math.isnan(x) or (self.killed and x <= 0):
            return np.full(n, np.nan)
        a, b, s = self.coefficients(dt)
        inc = b + s * stream.standard_normal(n)
        y, _ = lfilter([1.0], [1.0, -a], inc, zi=[a * x])
        if self.killed:
            u = stream.random(n)
            prev = np.concatenate(([x], y[:-1]))
            with np.errstate(over="ignore", invalid="ignore"):
                hit = (y <= 0) | (u < np.exp(-self.crossing_rate(dt) * prev * np.maximum(y, 0.0)))
            if hit.any():
                y[int(np.argmax(hit)):] = np.nan
        return y


class KilledDriftedBM(GaussianMotion):
    killed = True
    exact_step = True

    def __init__(self, c: float):
        self.c = c
        self.name = "killed_drifted_bm"
        self.params = {"c": c}
        lam = c * c / 2
        norm_h = 1.0 / math.sqrt(2 * math.pi * lam * lam)

        def h(x):
            x = np.asarray(x, dtype=float)
            return np.where(x > 0, norm_h * x * np.exp(c * x), 0.0)

        def nu_cdf(x):
            return gamma.cdf(np.asarray(x, dtype=float), 2, scale=1.0 / c)

        self.eigen = EigenData(
            lam=lam, h=h, p=lambda t: t ** -1.5, nu_cdf=nu_cdf,
            nu_mass=lambda B: float(nu_cdf(B.hi) - nu_cdf(B.lo)),
            normalization_note="h(x) = x e^{cx}/sqrt(2 pi lambda^2), nu density 2 lambda x e^{-cx} "
                               "(a probability: Gamma(2, 1/c)), p(t) = t^{-3/2}; nu(h) = +inf",
        )

    def coefficients(self, dt):
        return 1.0, -self.c * dt, math.sqrt(dt)

    def crossing_rate(self, dt):
        return 2.0 / dt

    def density(self, x, y, t):
        if y <= 0 or x <= 0:
            return 0.0
        sd = math.sqrt(t)
        free = math.exp(-(y - x) ** 2 / (2 * t)) - math.exp(-(y + x) ** 2 / (2 * t))
        return math.exp(-self.c * (y - x) - self.c ** 2 * t / 2) * free / (_SQRT_2PI * sd)

    def window(self, x, t):
        return (0.0, x + self.c * t + 14 * math.sqrt(t) + 10.0 / self.c)


class KilledRecurrentOU(GaussianMotion):
    killed = True

    def __init__(self, lam: float, crossing: str = "bridge"):
        if crossing not in ("bridge", "image"):
            raise InvalidParameter(f"crossing must be 'bridge' or 'image', got {crossing!r}")
        self.lam = lam
        self.crossing = crossing
        self.exact_step = crossing == "image"
        self.name = "killed_recurrent_ou"
        self.params = {"lam": lam, "crossing": crossing}
        c_h = math.sqrt(4 * lam / math.pi)

        def h(x):
            x = np.asarray(x, dtype=float)
            return np.where(x > 0, c_h * x, 0.0)

        def nu_cdf(x):
            x = np.maximum(np.asarray(x, dtype=float), 0.0)
            return 1.0 - np.exp(-lam * x * x)

        self.eigen = EigenData(
            lam=lam, h=h, p=lambda t: 1.0, nu_cdf=nu_cdf,
            nu_mass=lambda B: float(nu_cdf(B.hi) - nu_cdf(B.lo)),
            normalization_note="nu a probability with density 2 lambda x e^{-lambda x^2}, "
                               "h(x) = sqrt(4 lambda/pi) x so that nu(h) = 1, p = 1",
        )

    def _var(self, t):
        return -math.expm1(-2 * self.lam * t) / (2 * self.lam)

    def coefficients(self, dt):
        return math.exp(-self.lam * dt), 0.0, math.sqrt(self._var(dt))

    def crossing_rate(self, dt):
        if self.crossing == "image":
            a, _, s = self.coefficients(dt)
            return 2.0 * a / (s * s)
        # local Brownian-bridge approximation, O(dt) bias
        return 2.0 / dt

    def density(self, x, y, t):
        if y <= 0 or x <= 0:
            return 0.0
        mu = x * math.exp(-self.lam * t)
        sd = math.sqrt(self._var(t))
        return float(norm.pdf(y, mu, sd) - norm.pdf(y, -mu, sd))

    def window(self, x, t):
        sd = math.sqrt(self._var(t)) if t > 0 else 0.0
        return (0.0, abs(x) + 14 * sd + 1e-9)


class TransientOU(GaussianMotion):
    exact_step = True

    def __init__(self, lam: float, sigma2: float):
        self.lam = lam
        self.sigma2 = sigma2
        self.name = "transient_ou"
        self.params = {"lam": lam, "sigma2": sigma2}
        c_h = math.sqrt(lam / (math.pi * sigma2))
        self.eigen = EigenData(
            lam=lam,
            h=lambda x: c_h * np.exp(-lam * np.asarray(x, dtype=float) ** 2 / sigma2),
            p=lambda t: 1.0, nu_cdf=None,
            nu_mass=lambda B: B.length,
            normalization_note="nu = Lebesgue measure (infinite), h(x) = sqrt(lambda/(pi sigma^2)) "
                               "exp(-lambda x^2/sigma^2), p = 1; ratio limits hold for bounded B only",
        )

    def _var(self, t):
        return self.sigma2 * math.expm1(2 * self.lam * t) / (2 * self.lam)

    def coefficients(self, dt):
        return math.exp(self.lam * dt), 0.0, math.sqrt(self._var(dt))

    def density(self, x, y, t):
        return float(norm.pdf(y, x * math.exp(self.lam * t), math.sqrt(self._var(t))))

    def window(self, x, t):
        mu = x * math.exp(self.lam * t)
        sd = math.sqrt(self._var(t)) if t > 0 else 0.0
        core = 14 * math.sqrt(self.sigma2 / self.lam)
        return (min(mu - 14 * sd, -core), max(mu + 14 * sd, core))


# ── Jump chains ──────────────────────────────────────────────────────────────

class JumpMotion(MotionModel):
    state_kind = "integer"
    exact_step = True

    @abstractmethod
    def rate(self, state: int) -> float:
        """Total jump rate out of a live state."""

    @abstractmethod
    def jump(self, state: int, stream) -> float:
        """Next state (NaN when it is absorbing)."""

    def path(self, x, dt, n, stream):
        out = np.full(n, np.nan)
        if math.isnan(x):
            return out
        state = float(x)
        for k in range(n):
            # memorylessness: the residual clock may be redrawn at each grid point
            t = 0.0
            while not math.isnan(state):
                q = self.rate(int(state))
                if q <= 0:
                    break
                t += stream.exponential(1.0 / q)
                if t > dt:
                    break
                state = self.jump(int(state), stream)
            out[k] = state
        return out

    def step(self, states, dt, rng):
        x = np.asarray(states, dtype=float)
        return np.array([self.path(v, dt, 1, rng)[0] for v in x], dtype=float)


class SubcriticalGW(JumpMotion):
    def __init__(self, rho: Mapping[int, float]):
        self.rho = dict(sorted(rho.items()))
        self.name = "subcritical_gw"
        self.params = {"rho": {str(k): v for k, v in self.rho.items()}}
        self._ys = np.array(list(self.rho), dtype=np.int64)
        self._cdf = np.cumsum(list(self.rho.values()))
        self._cdf[-1] = 1.0
        lam = -sum(y * p for y, p in self.rho.items())
        self.eigen = EigenData(
            lam=lam, h=lambda x: np.asarray(x, dtype=float), p=lambda t: 1.0,
            nu_cdf=None, nu_mass=None,
            normalization_note="h(x) = x; nu finite but not explicit, not stored",
        )

    def rate(self, state):
        return float(state)

    def jump(self, state, stream):
        i = int(np.searchsorted(self._cdf, stream.random(), side="right"))
        nxt = state + int(self._ys[min(i, len(self._ys) - 1)])
        return math.nan if nxt <= 0 else float(nxt)

    def path(self, x, dt, n, stream):
        if not math.isnan(x) and x <= 0:
            return np.full(n, np.nan)
        return super().path(x, dt, n, stream)


class ErgodicCTMC(JumpMotion):
    def __init__(self, Q: np.ndarray, pi: np.ndarray, name: str = "ergodic_ctmc"):
        self.Q = Q
        self.pi = pi
        self.name = name
        self.n_states = Q.shape[0]
        self.params = {} if name == "single_state" else {"Q": Q.tolist(), "pi": pi.tolist()}
        self._exit = -np.diag(Q)
        jumps = np.where(np.eye(self.n_states, dtype=bool), 0.0, Q)
        with np.errstate(invalid="ignore", divide="ignore"):
            self._jump_cdf = np.cumsum(jumps / np.where(self._exit > 0, self._exit, 1.0)[:, None], axis=1)
        cum_pi = np.cumsum(pi)

        def nu_cdf(x):
            idx = np.floor(np.asarray(x, dtype=float))
            out = np.where(idx < 0, 0.0, cum_pi[np.clip(idx, 0, self.n_states - 1).astype(int)])
            return out

        def nu_mass(B: Interval):
            k = np.arange(self.n_states)
            return float(pi[B.contains(k)].sum())

        self.eigen = EigenData(
            lam=0.0, h=lambda x: np.ones_like(np.asarray(x, dtype=float)), p=lambda t: 1.0,
            nu_cdf=nu_cdf, nu_mass=nu_mass,
            normalization_note="h = 1, nu = stationary probability, p = 1, lambda = 0",
        )

    def rate(self, state):
        return float(self._exit[state])

    def jump(self, state, stream):
        row = self._jump_cdf[state]
        j = int(np.searchsorted(row, stream.random() * row[-1], side="right"))
        return float(min(j, self.n_states - 1))

    def density(self, x, y, t):
        return float(expm(self.Q * t)[int(x), int(y)])

    def transition_row(self, x: int, t: float) -> np.ndarray:
        return expm(self.Q * t)[int(x)]

    def states(self):
        return np.arange(self.n_states, dtype=float)


# ── Constructors ─────────────────────────────────────────────────────────────

def _positive(name: str, value) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise InvalidParameter(f"{name} must be a number, got {value!r}") from None
    if not (math.isfinite(v) and v > 0):
        raise InvalidParameter(f"{name} must be > 0, got {value}")
    return v


def killed_drifted_bm(c: float) -> MotionModel:
    """Brownian motion with drift −c killed at 0; exact step with bridge-hit correction."""
    return KilledDriftedBM(_positive("c", c))


def killed_recurrent_ou(lam: float, crossing: str = "bridge") -> MotionModel:
    """dY = −λY dt + dB killed at 0.

    ``crossing="bridge"`` uses the local Brownian-bridge approximation
    (variance dt, O(dt) bias); ``"image"`` uses the exact crossing law from
    the image density and is bias-free.
    """
    return KilledRecurrentOU(_positive("lam", lam), crossing)


def transient_ou(lam: float, sigma2: float) -> MotionModel:
    """Generator ½σ²f'' + λxf'; no absorption."""
    return TransientOU(_positive("lam", lam), _positive("sigma2", sigma2))


def subcritical_gw(rho: Mapping) -> MotionModel:
    if not rho:
        raise InvalidParameter("rho is empty")
    parsed: dict[int, float] = {}
    for k, p in rho.items():
        try:
            y = int(k)
        except (TypeError, ValueError):
            raise InvalidParameter(f"rho key {k!r} is not an integer") from None
        if y < -1:
            raise InvalidParameter(f"rho must be supported on {{-1, 0, 1, ...}}, got jump {y}")
        p = float(p)
        if not math.isfinite(p) or p < 0:
            raise InvalidParameter(f"rho({y}) = {p} is negative or not finite")
        if p > 0:
            parsed[y] = parsed.get(y, 0.0) + p
    total = math.fsum(parsed.values())
    if abs(total - 1.0) > 1e-12:
        raise InvalidParameter(f"rho sums to {total}, not 1")
    drift = math.fsum(y * p for y, p in parsed.items())
    if drift >= 0:
        raise InvalidParameter(f"subcriticality requires sum y rho(y) < 0, got {drift}")
    return SubcriticalGW(parsed)


def ergodic_ctmc(Q: Sequence[Sequence[float]], pi: Sequence[float] | None = None, *,
                 name: str = "ergodic_ctmc") -> MotionModel:
    """Finite irreducible chain; pi is validated against πQ = 0 (solved for when omitted)."""
    Q = np.array(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] == 0:
        raise InvalidGenerator(f"Q must be a non-empty square matrix, got shape {Q.shape}")
    K = Q.shape[0]
    off = Q[~np.eye(K, dtype=bool)]
    if np.any(off < 0):
        raise InvalidGenerator("Q has negative off-diagonal rates")
    if np.any(np.abs(Q.sum(axis=1)) > 1e-10):
        raise InvalidGenerator("rows of Q must sum to 0")
    if K > 1:
        n_comp, _ = connected_components(Q > 0, directed=True, connection="strong")
        if n_comp != 1:
            raise InvalidGenerator(f"Q is not irreducible ({n_comp} communicating classes)")
    if pi is None:
        pi = stationary_vector(Q)
    pi = np.array(pi, dtype=float)
    if pi.shape != (K,) or np.any(pi < 0) or abs(pi.sum() - 1) > NU_TOLERANCE:
        raise InvalidGenerator("pi must be a probability vector of length K")
    if np.max(np.abs(pi @ Q)) > NU_TOLERANCE:
        raise InvalidGenerator(f"pi is not stationary: |pi Q| = {np.max(np.abs(pi @ Q)):.3g} > {NU_TOLERANCE}")
    return ErgodicCTMC(Q, pi, name=name)


def stationary_vector(Q) -> np.ndarray:
    """Solve πQ = 0, Σπ = 1 by least squares."""
    Q = np.asarray(Q, dtype=float)
    K = Q.shape[0]
    A = np.vstack([Q.T, np.ones(K)])
    b = np.zeros(K + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


def single_state() -> MotionModel:
    """Motion that never moves: the branching dynamics reduce to a pure birth–death tree."""
    return ergodic_ctmc([[0.0]], [1.0], name="single_state")


MODEL_BUILDERS: dict[str, Callable[..., MotionModel]] = {
    "killed_drifted_bm":   killed_drifted_bm,
    "killed_recurrent_ou": killed_recurrent_ou,
    "transient_ou":        transient_ou,
    "subcritical_gw":      subcritical_gw,
    "ergodic_ctmc":        ergodic_ctmc,
    "single_state":        lambda: single_state(),
}


def build_model(name: str, params: Mapping | None = None) -> MotionModel:
    try:
        builder = MODEL_BUILDERS[name]
    except KeyError:
        raise InvalidParameter(f"unknown model {name!r}") from None
    try:
        return builder(**dict(params or {}))
    except TypeError as e:
        raise InvalidParameter(f"bad parameters for {name}: {e}") from None


# ── Regular variation ────────────────────────────────────────────────────────

@dataclass(frozen=True)
class RegularVariationReport:
    t_grid: tuple[float, ...]
    deviations: tuple[float, ...]
    decaying: bool


def regular_variation_check(p: Callable[[float], float], s_max: float, t_grid: Sequence[float],
                            n_s: int = 101, tol: float = 0.05) -> RegularVariationReport:
    """max_{0 ≤ s ≤ s_max} |p(t+s)/p(t) − 1| per grid t.

    ``decaying`` is set when the deviations never increase along the grid and
    the last one is below ``tol``; the caller still owns the verdict.
    """
    s_values = np.linspace(0.0, s_max, n_s)
    devs = []
    for t in t_grid:
        pt = p(t)
        if not pt > 0:
            raise InvalidParameter(f"p must be positive on the grid, p({t}) = {pt}")
        devs.append(max(abs(p(t + s) / pt - 1.0) for s in s_values))
    decaying = all(b <= a + 1e-15 for a, b in zip(devs, devs[1:])) and devs[-1] < tol
    return RegularVariationReport(tuple(float(t) for t in t_grid), tuple(devs), decaying)
