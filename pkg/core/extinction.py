"""extinction.py — η, σ, the moment generating operator G and local survival.

η(x) = P_x(extinction), σ(x) = P_x(D_∞ = 0); both are fixed points of
G(g)(x) = E_x ∏_{u ∈ ξ_1} g(u_1), and η = lim G⁽ⁿ⁾(0). The process is
strongly supercritical exactly when η = σ.

Finite-horizon surrogates are used throughout: extinction by T for η,
D_T < ε for σ, ξ_T(K) > 0 for local survival.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from config import G_BOUNDARY_MASS, SIGMA_EPS, SIGMA_T

from .analysis import malthusian_d
from .engine import ReplicaBatch, Trajectory, run_replicas
from .errors import InvalidParameter, TruncationTooSmall
from .model import BranchConfig, EstimatorResult, Interval
from .rng import CTX_G, derive_seed

logger = logging.getLogger(__name__)


# ── η ────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ExtinctionReport:
    T: float
    eta: EstimatorResult
    late: EstimatorResult                  # P(extinct in (T/2, T]); near 0 once η̂ has saturated
    batch: ReplicaBatch = field(repr=False, compare=False)


def _extinction_flags(T: float, traj: Trajectory) -> dict:
    et = traj.extinct_time
    extinct = et is not None
    return {"extinct": float(extinct), "extinct_late": float(extinct and et > T / 2)}


def extinction_report(config: BranchConfig, T: float, n_rep: int, workers: int | None = None) -> ExtinctionReport:
    """Extinction-by-T frequency plus the late-extinction saturation diagnostic.

    With the default snapshot grid a replica's tree up to its extinction time
    does not depend on the horizon, so per replica (same seed) the indicator
    is nondecreasing in T.
    """
    cfg = config.with_(t_end=float(T))

    batch = run_replicas(cfg, n_rep, partial(_extinction_flags, float(T)), workers)
    report = ExtinctionReport(T=float(T), eta=batch.estimate("extinct"), late=batch.estimate("extinct_late"),
                              batch=batch)
    if report.late.mean > 0.01:
        logger.warning("eta at T=%g may not have saturated: %.3f of replicas went extinct in (T/2, T]",
                       T, report.late.mean)
    return report


def eta_mc(config: BranchConfig, T: float, n_rep: int, workers: int | None = None) -> EstimatorResult:
    """η̂(x0): fraction of replicas extinct by T."""
    return extinction_report(config, T, n_rep, workers).eta


# ── σ ────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class SigmaReport:
    T: float
    eps: float
    sigma: EstimatorResult
    eta: EstimatorResult
    gap: EstimatorResult                   # paired σ̂ − η̂, per replica
    batch: ReplicaBatch = field(repr=False, compare=False)


def _sigma_flags(cfg: BranchConfig, eps: float, traj: Trajectory) -> dict:
    final = traj.final
    if final is None:
        return {"extinct": math.nan, "D_T": math.nan, "small": math.nan, "gap": math.nan}
    d = malthusian_d(final, cfg.motion.eigen, cfg.x0, cfg.r, cfg.offspring.m1)
    extinct = float(len(final) == 0)
    small = float(d < eps)
    return {"extinct": extinct, "D_T": d, "small": small, "gap": small - extinct}


def sigma_report(config: BranchConfig, T: float = SIGMA_T, eps: float = SIGMA_EPS, n_rep: int = 10_000,
                 workers: int | None = None) -> SigmaReport:
    """σ̂ = P(D_T < ε) next to η̂ = P(extinct by T) from the same replicas (η̂ ≤ σ̂ ≤ 1)."""
    if not eps > 0:
        raise InvalidParameter(f"eps must be > 0, got {eps}")
    cfg = config.with_(t_end=float(T))
    batch = run_replicas(cfg, n_rep, partial(_sigma_flags, cfg, float(eps)), workers)
    report = SigmaReport(T=float(T), eps=float(eps), sigma=batch.estimate("small"), eta=batch.estimate("extinct"),
                         gap=batch.estimate("gap"), batch=batch)
    logger.info("sigma(T=%g, eps=%g) = %.4f ± %.4f, eta = %.4f ± %.4f", T, eps, report.sigma.mean,
                report.sigma.stderr, report.eta.mean, report.eta.stderr)
    return report


def sigma_mc(config: BranchConfig, T: float = SIGMA_T, eps: float = SIGMA_EPS, n_rep: int = 10_000,
             workers: int | None = None) -> EstimatorResult:
    """σ̂(x0): fraction of replicas with D_T < eps."""
    return sigma_report(config, T, eps, n_rep, workers).sigma


# ── G ────────────────────────────────────────────────────────────────────────

GridFunction = Callable[[np.ndarray], np.ndarray]


def _product_reduce(g: GridFunction, bounds: tuple[float, float] | None, traj: Trajectory) -> dict:
    final = traj.final
    if final is None:
        return {"G": math.nan, "live": math.nan, "outside": math.nan}
    states = final.states
    prod = float(np.prod(g(states))) if len(states) else 1.0
    outside = 0
    if bounds is not None and len(states):
        outside = int(np.count_nonzero((states < bounds[0]) | (states > bounds[1])))
    return {"G": prod, "live": float(len(states)), "outside": float(outside)}


def _product_reducer(g: GridFunction, bounds: tuple[float, float] | None = None):
    return partial(_product_reduce, g, bounds)


def g_apply(g: GridFunction, x: float, config_one_unit: BranchConfig, n_mc: int,
            workers: int | None = None) -> EstimatorResult:
    """Ĝ(g)(x): mean over n_mc one-unit runs from x of ∏ g(u_1) over live particles (empty product = 1).

    With workers > 1 g must be picklable, e.g. a grid_function.
    """
    cfg = config_one_unit.with_(x0=float(x), t_end=1.0)
    return run_replicas(cfg, n_mc, _product_reducer(g), workers).estimate("G")


def grid_function(x_grid: Sequence[float], values: Sequence[float]) -> GridFunction:
    """Piecewise-linear g through (x_grid, values), constant beyond the ends."""
    xs = np.asarray(x_grid, dtype=float)
    vs = np.asarray(values, dtype=float)
    return partial(_interp_grid, xs, vs)


def _interp_grid(xs: np.ndarray, vs: np.ndarray, states) -> np.ndarray:
    return np.interp(np.asarray(states, dtype=float), xs, vs)


@dataclass(frozen=True)
class GIterateResult:
    x_grid: tuple[float, ...]
    iterates: tuple[np.ndarray, ...]       # iterates[0] = 0
    stderrs: tuple[np.ndarray, ...]
    boundary_fraction: tuple[float, ...]   # per sweep, share of live positions outside the grid

    def sup_change(self) -> float:
        if len(self.iterates) < 2:
            return math.nan
        return float(np.max(np.abs(self.iterates[-1] - self.iterates[-2])))

    @property
    def limit(self) -> np.ndarray:
        return self.iterates[-1]


def g_iterate(x_grid: Sequence[float], config_one_unit: BranchConfig, n_iter: int, n_mc: int,
              workers: int | None = None) -> GIterateResult:
    """g ← Ĝ(g) from g = 0 on x_grid, n_iter sweeps with fresh Monte Carlo each sweep.

    Sweep k at grid point j uses the seed derive_seed(seed, CTX_G, k, j).
    Raises TruncationTooSmall when more than G_BOUNDARY_MASS of the
    one-unit live positions of a sweep fall outside the grid.
    """
    xs = np.array(sorted(float(v) for v in x_grid))
    if xs.size == 0:
        raise InvalidParameter("x_grid is empty")
    if n_iter < 0:
        raise InvalidParameter(f"n_iter must be >= 0, got {n_iter}")
    bounds = (float(xs[0]), float(xs[-1]))
    current = np.zeros_like(xs)
    iterates, stderrs, boundary = [current.copy()], [np.zeros_like(xs)], []

    for k in range(1, n_iter + 1):
        g = grid_function(xs, current)
        nxt, err = np.empty_like(xs), np.empty_like(xs)
        live_total = outside_total = 0.0
        for j, x in enumerate(xs):
            cfg = config_one_unit.with_(x0=float(x), t_end=1.0, seed=derive_seed(config_one_unit.seed, CTX_G, k, j))
            batch = run_replicas(cfg, n_mc, _product_reducer(g, bounds), workers)
            est = batch.estimate("G")
            nxt[j], err[j] = est.mean, est.stderr
            live_total += float(np.nansum(batch.values("live")))
            outside_total += float(np.nansum(batch.values("outside")))
        frac = outside_total / live_total if live_total else 0.0
        boundary.append(frac)
        if frac > G_BOUNDARY_MASS:
            raise TruncationTooSmall(
                f"{frac:.2%} of one-unit live positions fall outside the grid [{bounds[0]}, {bounds[1]}] "
                f"(limit {G_BOUNDARY_MASS:.0%}); widen x_grid"
            )
        logger.info("G sweep %d/%d: sup change %.4g, boundary mass %.3g", k, n_iter,
                    float(np.max(np.abs(nxt - current))), frac)
        current = nxt
        iterates.append(current.copy())
        stderrs.append(err)

    return GIterateResult(tuple(float(v) for v in xs), tuple(iterates), tuple(stderrs), tuple(boundary))


# ── Local survival ───────────────────────────────────────────────────────────

def _local_counts(K: Interval, traj: Trajectory) -> dict:
    final = traj.final
    if final is None:
        return {"count_K": math.nan, "live": math.nan, "local": math.nan}
    count = final.count(K)
    return {"count_K": float(count), "live": float(len(final)), "local": float(count > 0)}


def local_survival_batch(config: BranchConfig, K: Interval, T: float, n_rep: int,
                         workers: int | None = None) -> ReplicaBatch:
    cfg = config.with_(t_end=float(T))

    return run_replicas(cfg, n_rep, partial(_local_counts, K), workers)


def local_survival_mc(config: BranchConfig, K: Interval, T: float, n_rep: int,
                      workers: int | None = None) -> EstimatorResult:
    """Fraction of replicas with ξ_T(K) > 0."""
    return local_survival_batch(config, K, T, n_rep, workers).estimate("local")
