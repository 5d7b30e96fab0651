"""experiment.py — Experiment configs: parsing, validation and dispatch.

A config file is either flat ``key = value`` text (one pair per line, ``#``
comments, values read as JSON5 scalars, arrays or objects; bare words are
strings) or a single JSON/JSON5 object. Every key is checked against
KNOWN_KEYS before anything is simulated.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from functools import partial
from pathlib import Path
from typing import Any, Mapping

import json5
import numpy as np
from rapidfuzz import fuzz, process

from config import (
    DEFAULT_MAX_POPULATION,
    DEFAULT_SEED,
    DEFAULT_STEP_DT,
    EXPERIMENTS,
    MODEL_NAMES,
    PHI_TOL,
    SIGMA_EPS,
)

from .analysis import (
    QuadratureResult,
    d_second_moment_analytic,
    malthusian_d,
    phi_ergodic,
    phi_integrand_table,
    phi_quadrature,
)
from .engine import Trajectory, run_replicas
from .errors import BranchError, InvalidConfig, UnknownKey
from .extinction import extinction_report, g_iterate, local_survival_batch, sigma_report
from .model import FULL_LINE, BranchConfig, EstimatorResult, Interval
from .motions import ErgodicCTMC, build_model
from .offspring import extinction_fixed_point, make_offspring
from .oracle import has_density
from .qsd import QSD_MODES, half_split_distance, qsd_sample
from .spine import (
    h_transform_expectation,
    many_to_one,
    s_b_curve,
    s_b_reference,
    two_spine_second_moment,
    yule_first_moment,
    yule_second_moment,
)

logger = logging.getLogger(__name__)

REQUIRED_KEYS = ("experiment", "model", "offspring", "r", "x0")

NEEDS: dict[str, tuple[str, ...]] = {
    "lln":            ("B", "B_prime"),
    "sb-curve":       ("B", "t_grid"),
    "g-iterate":      ("x_grid",),
    "local-survival": ("K",),
}


def suggest(word: str, choices) -> str:
    """' (did you mean 'x'?)' when rapidfuzz finds a close match, else ''."""
    best = process.extractOne(word, list(choices), scorer=fuzz.WRatio)
    if best and best[1] > 70:
        return f" (did you mean {best[0]!r}?)"
    return ""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    model: str
    offspring: dict
    r: float
    x0: float
    model_params: dict = field(default_factory=dict)
    t_end: float = 1.0
    snapshot_times: tuple[float, ...] | None = None
    step_dt: float = DEFAULT_STEP_DT
    n_rep: int = 1000
    n_mc: int = 10_000
    seed: int = DEFAULT_SEED
    max_population: int = DEFAULT_MAX_POPULATION
    B: tuple[float, float] | None = None
    B_prime: tuple[float, float] | None = None
    K: tuple[float, float] | None = None
    x_grid: tuple[float, ...] | None = None
    t_grid: tuple[float, ...] | None = None
    n_iter: int = 10
    eps: float = SIGMA_EPS
    condition: str = "survival"
    qsd_mode: str = "pooled"
    bins: int | tuple[float, ...] | None = None
    tol: float = PHI_TOL
    output_path: str | None = None

    # ── derived objects ──────────────────────────────────────────────

    def interval(self, name: str) -> Interval | None:
        v = getattr(self, name)
        return None if v is None else Interval.parse(v)

    def branch_config(self) -> BranchConfig:
        motion = build_model(self.model, self.model_params)
        law = make_offspring(self.offspring)
        return BranchConfig(
            motion=motion, offspring=law, r=self.r, x0=self.x0, t_end=self.t_end,
            snapshot_times=tuple(self.snapshot_times or ()), step_dt=self.step_dt,
            max_population=self.max_population, seed=self.seed,
        )

    def echo(self) -> dict:
        """JSON-ready dict that parse_config maps back to an equal config."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "offspring":
                v = {str(k): p for k, p in v.items()}
            elif f.name in ("B", "B_prime", "K") and v is not None:
                v = [_finite_or_text(e) for e in v]
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


def _finite_or_text(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


KNOWN_KEYS = tuple(f.name for f in fields(ExperimentConfig))


# ── Parsing ──────────────────────────────────────────────────────────────────

def _number(key: str, value, kind=float):
    if isinstance(value, bool):
        raise InvalidConfig(f"{key} must be a number, got {value!r}")
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise InvalidConfig(f"{key} must be a number, got {value!r}") from None
    if kind is int:
        if not v.is_integer():
            raise InvalidConfig(f"{key} must be an integer, got {value!r}")
        return int(v)
    return v


def _number_list(key: str, value) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)):
        raise InvalidConfig(f"{key} must be a list of numbers, got {value!r}")
    return tuple(_number(key, v) for v in value)


def _interval(key: str, value) -> tuple[float, float]:
    try:
        iv = Interval.parse(value)
    except (BranchError, ValueError) as e:
        raise InvalidConfig(f"{key}: {e}") from None
    return (iv.lo, iv.hi)


_COERCE = {
    "experiment":     lambda k, v: str(v),
    "model":          lambda k, v: str(v),
    "r":              _number,
    "x0":             _number,
    "t_end":          _number,
    "step_dt":        _number,
    "eps":            _number,
    "tol":            _number,
    "n_rep":          lambda k, v: _number(k, v, int),
    "n_mc":           lambda k, v: _number(k, v, int),
    "seed":           lambda k, v: _number(k, v, int),
    "max_population": lambda k, v: _number(k, v, int),
    "n_iter":         lambda k, v: _number(k, v, int),
    "snapshot_times": lambda k, v: None if v is None else _number_list(k, v),
    "x_grid":         lambda k, v: None if v is None else _number_list(k, v),
    "t_grid":         lambda k, v: None if v is None else _number_list(k, v),
    "B":              lambda k, v: None if v is None else _interval(k, v),
    "B_prime":        lambda k, v: None if v is None else _interval(k, v),
    "K":              lambda k, v: None if v is None else _interval(k, v),
    "condition":      lambda k, v: str(v),
    "qsd_mode":       lambda k, v: str(v),
    "output_path":    lambda k, v: None if v is None else str(v),
}


def _bins(key, value):
    if value is None or isinstance(value, (list, tuple)):
        return None if value is None else _number_list(key, value)
    return _number(key, value, int)


def _mapping(key, value) -> dict:
    if not isinstance(value, Mapping):
        raise InvalidConfig(f"{key} must be an object, got {value!r}")
    return dict(value)


def _offspring(key, value) -> dict:
    pmf = _mapping(key, value)
    out = {}
    for k, p in pmf.items():
        try:
            ki = int(k)
        except (TypeError, ValueError):
            raise InvalidConfig(f"offspring key {k!r} is not an integer") from None
        out[ki] = _number(f"offspring[{k}]", p)
    return dict(sorted(out.items()))


_COERCE["bins"] = _bins
_COERCE["model_params"] = _mapping
_COERCE["offspring"] = _offspring


def parse_config(raw: Mapping[str, Any]) -> ExperimentConfig:
    """Validate keys and types and return an ExperimentConfig (no simulation objects yet)."""
    unknown = [k for k in raw if k not in KNOWN_KEYS]
    if unknown:
        k = unknown[0]
        raise UnknownKey(f"unknown config key {k!r}{suggest(k, KNOWN_KEYS)}")
    missing = [k for k in REQUIRED_KEYS if k not in raw]
    if missing:
        raise InvalidConfig(f"missing required key(s): {', '.join(missing)}")
    values = {k: _COERCE[k](k, v) for k, v in raw.items()}
    cfg = ExperimentConfig(**values)
    _check(cfg)
    return cfg


def _check(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise InvalidConfig(f"unknown experiment {cfg.experiment!r}{suggest(cfg.experiment, EXPERIMENTS)}")
    if cfg.model not in MODEL_NAMES:
        raise InvalidConfig(f"unknown model {cfg.model!r}{suggest(cfg.model, MODEL_NAMES)}")
    for key in NEEDS.get(cfg.experiment, ()):
        if getattr(cfg, key) is None:
            raise InvalidConfig(f"experiment {cfg.experiment!r} needs key {key!r}")
    if cfg.n_rep < 1 or cfg.n_mc < 1:
        raise InvalidConfig("n_rep and n_mc must be >= 1")
    if cfg.n_iter < 0:
        raise InvalidConfig(f"n_iter must be >= 0, got {cfg.n_iter}")
    if cfg.condition not in ("survival", "d_positive"):
        raise InvalidConfig(f"condition must be 'survival' or 'd_positive', got {cfg.condition!r}")
    if cfg.qsd_mode not in QSD_MODES:
        raise InvalidConfig(f"qsd_mode must be one of {QSD_MODES}, got {cfg.qsd_mode!r}")
    if not cfg.eps > 0 or not cfg.tol > 0:
        raise InvalidConfig("eps and tol must be > 0")


def read_config_text(text: str) -> dict:
    """Flat key = value text, or a JSON/JSON5 object."""
    body = text.lstrip("﻿").strip()
    if body.startswith("{"):
        try:
            raw = json5.loads(body)
        except ValueError as e:
            raise InvalidConfig(f"config is not valid JSON5: {e}") from None
        if not isinstance(raw, dict):
            raise InvalidConfig("config document must be an object")
        return raw
    raw: dict = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidConfig(f"line {n}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in raw:
            raise InvalidConfig(f"line {n}: duplicate key {key!r}")
        try:
            raw[key] = json5.loads(value)
        except ValueError:
            raw[key] = value
    return raw


def load_config(path: Path | str) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InvalidConfig(f"cannot read config {path}: {e}") from None
    return parse_config(read_config_text(text))


def validate(cfg: ExperimentConfig) -> BranchConfig:
    """Build every model object and check every precondition before any simulation."""
    bc = cfg.branch_config()
    motion = bc.motion
    x0 = bc.x0
    if motion.state_kind == "integer":
        if not float(x0).is_integer():
            raise InvalidConfig(f"x0 must be an integer state for {motion.name}, got {x0}")
        if motion.n_states is not None and not 0 <= x0 < motion.n_states:
            raise InvalidConfig(f"x0 = {x0} is outside the state space 0..{motion.n_states - 1}")
    if not float(motion.eigen.h_values(np.array([x0]))[0]) > 0:
        raise InvalidConfig(f"x0 = {x0} is absorbing for {motion.name} (h(x0) = 0)")
    if cfg.experiment == "sb-curve" and motion.eigen.nu_mass is None:
        raise InvalidConfig(f"sb-curve needs nu(B), which {motion.name} does not provide")
    return bc


# ── Results container ────────────────────────────────────────────────────────

@dataclass
class ExperimentResult:
    experiment: str
    rows: list[tuple] = field(default_factory=list)
    estimators: dict[str, EstimatorResult] = field(default_factory=dict)
    quadratures: dict[str, QuadratureResult] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    n_rep: int = 0
    failures: int = 0
    overflow_count: int = 0

    def absorb_batch(self, batch) -> None:
        self.n_rep = batch.n_rep
        self.failures = batch.failures
        self.overflow_count = batch.overflow_count


# ── Dispatch ─────────────────────────────────────────────────────────────────

def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    bc = validate(cfg)
    logger.info("experiment %s on %s (seed %d, %d replicas)", cfg.experiment, bc.motion.name, cfg.seed, cfg.n_rep)
    return _RUNNERS[cfg.experiment](cfg, bc, workers)


def _snapshot_reduce(bc: BranchConfig, extra, traj: Trajectory) -> dict:
    eigen, m1 = bc.motion.eigen, bc.offspring.m1
    out = {}
    for j, t in enumerate(bc.snapshot_times):
        pop = traj.at(t)
        if pop is None:
            continue
        d = malthusian_d(pop, eigen, bc.x0, bc.r, m1)
        out.update({f"live@{j}": float(len(pop)), f"absorbed@{j}": float(pop.absorbed_count),
                    f"dead@{j}": float(pop.dead_count), f"branched@{j}": float(pop.branched_count),
                    f"births@{j}": float(pop.births), f"chi_mass@{j}": pop.chi_mass,
                    f"D@{j}": d, f"D2@{j}": d * d})
        if extra is not None:
            out.update(extra(j, pop))
    return out


def _snapshot_reducer(bc: BranchConfig, extra=None):
    return partial(_snapshot_reduce, bc, extra)


def _run_simulate(cfg, bc, workers):
    batch = run_replicas(bc, cfg.n_rep, _snapshot_reducer(bc), workers)
    res = ExperimentResult("simulate")
    res.absorb_batch(batch)
    for i in batch.usable():
        row = batch.rows[i]
        for j, t in enumerate(bc.snapshot_times):
            res.rows.append((i, t, int(row[f"live@{j}"]), int(row[f"absorbed@{j}"]), int(row[f"dead@{j}"]),
                             int(row[f"branched@{j}"]), int(row[f"births@{j}"]), row[f"D@{j}"]))
    growth = bc.growth
    for j, t in enumerate(bc.snapshot_times):
        for name in ("D", "D2", "live", "chi_mass"):
            res.estimators[f"{name}(t={t:g})"] = batch.estimate(f"{name}@{j}")
        res.extra[f"E_chi_target(t={t:g})"] = math.exp(growth * t)
        try:
            res.extra[f"E_D2_analytic(t={t:g})"] = d_second_moment_analytic(
                bc.motion, bc.x0, bc.r, bc.offspring.m1, bc.offspring.m2, t, cfg.n_mc, cfg.seed, cfg.step_dt)
        except BranchError as e:
            logger.warning("no analytic E[D_t^2] at t=%g: %s", t, e)
    return res


def _run_phi(cfg, bc, workers):
    law = bc.offspring
    q = phi_quadrature(bc.motion, bc.x0, bc.r, law.m1, law.m2, cfg.tol, cfg.n_mc, cfg.seed, cfg.step_dt)
    res = ExperimentResult("phi", quadratures={"phi": q})
    horizon = q.truncation_T if not q.diverged else max(cfg.t_end, 10.0)
    res.rows = phi_integrand_table(bc.motion, bc.x0, bc.r, law.m1, law.m2, horizon, 101, cfg.n_mc, cfg.seed,
                                   cfg.step_dt)
    if isinstance(bc.motion, ErgodicCTMC):
        res.extra["phi_closed_form"] = phi_ergodic(law.m1, law.m2)
    res.extra["E_D2_analytic(t_end)"] = d_second_moment_analytic(bc.motion, bc.x0, bc.r, law.m1, law.m2,
                                                                 cfg.t_end, cfg.n_mc, cfg.seed, cfg.step_dt)
    return res


def _lln_counts(B: Interval, Bp: Interval, expected: tuple[float, ...], j: int, pop) -> dict:
    cb, cbp = pop.count(B), pop.count(Bp)
    w = cb / expected[j]
    return {f"cB@{j}": float(cb), f"cBp@{j}": float(cbp), f"W@{j}": w, f"W2@{j}": w * w,
            f"ratio@{j}": cb / cbp if cbp else math.nan}


def _run_lln(cfg, bc, workers):
    B, Bp = cfg.interval("B"), cfg.interval("B_prime")
    law, motion = bc.offspring, bc.motion
    expected = [many_to_one(motion, bc.x0, Bp, t, bc.r, law.m1, cfg.n_mc, cfg.seed, cfg.step_dt).mean
                for t in bc.snapshot_times]
    if min(expected) <= 0:
        raise InvalidConfig(f"E xi_t(B') = 0 for B' = {Bp.as_list()}; choose a B' the motion can reach")

    counts = partial(_lln_counts, B, Bp, tuple(expected))
    batch = run_replicas(bc, cfg.n_rep, _snapshot_reducer(bc, counts), workers)
    res = ExperimentResult("lln")
    res.absorb_batch(batch)
    for i in batch.usable():
        row = batch.rows[i]
        for j, t in enumerate(bc.snapshot_times):
            res.rows.append((i, t, int(row[f"cB@{j}"]), int(row[f"cBp@{j}"]), row[f"D@{j}"], row[f"W@{j}"]))

    q = phi_quadrature(motion, bc.x0, bc.r, law.m1, law.m2, cfg.tol, cfg.n_mc, cfg.seed, cfg.step_dt)
    res.quadratures["phi"] = q
    nu = motion.eigen.nu_mass
    nu_ratio = nu(B) / nu(Bp) if nu is not None and nu(Bp) > 0 else None
    res.extra["nu_ratio"] = nu_ratio
    res.extra["E_W2_target"] = nu_ratio ** 2 * q.value if nu_ratio is not None and not q.diverged else None
    for j, t in enumerate(bc.snapshot_times):
        tag = f"t={t:g}"
        res.extra[f"E_xi_Bprime({tag})"] = expected[j]
        for name in ("W", "W2", "D", "D2", "ratio"):
            res.estimators[f"{name}({tag})"] = batch.estimate(f"{name}@{j}")
        num = float(np.nansum(batch.values(f"cB@{j}")))
        den = float(np.nansum(batch.values(f"cBp@{j}")))
        res.extra[f"pooled_ratio({tag})"] = num / den if den else None
    return res


def _run_qsd(cfg, bc, workers):
    report = qsd_sample(bc, bc.t_end, cfg.n_rep, cfg.condition, cfg.eps, cfg.qsd_mode, cfg.bins, workers)
    res = ExperimentResult("qsd", n_rep=cfg.n_rep)
    index: dict[int, int] = {}
    for rid, pos, w in zip(report.replica_ids.tolist(), report.positions.tolist(), report.weights.tolist()):
        k = index.get(rid, 0)
        index[rid] = k + 1
        res.rows.append((rid, k, pos, w))
    res.extra["qsd"] = report.to_dict()
    if report.n_kept >= 2:
        res.extra["half_split_ks"] = half_split_distance(report)
    B, Bp = cfg.interval("B"), cfg.interval("B_prime")
    if B is not None and Bp is not None:
        inside = report.weights[B.contains(report.positions)].sum()
        other = report.weights[Bp.contains(report.positions)].sum()
        res.extra["ratio"] = float(inside / other) if other > 0 else None
        nu = bc.motion.eigen.nu_mass
        if nu is not None and nu(Bp) > 0:
            res.extra["nu_ratio"] = nu(B) / nu(Bp)
    return res


def _run_extinction(cfg, bc, workers):
    report = extinction_report(bc, bc.t_end, cfg.n_rep, workers)
    res = ExperimentResult("extinction", estimators={"eta": report.eta, "extinct_late": report.late})
    res.absorb_batch(report.batch)
    for i in report.batch.usable():
        row = report.batch.rows[i]
        res.rows.append((i, int(row["extinct"]), int(row["extinct_late"])))
    if bc.motion.name == "single_state":
        res.extra["eta_closed_form"] = extinction_fixed_point(bc.offspring)
    return res


def _run_sigma(cfg, bc, workers):
    report = sigma_report(bc, bc.t_end, cfg.eps, cfg.n_rep, workers)
    res = ExperimentResult("sigma", estimators={"sigma": report.sigma, "eta": report.eta, "sigma_minus_eta": report.gap})
    res.absorb_batch(report.batch)
    for i in report.batch.usable():
        row = report.batch.rows[i]
        res.rows.append((i, int(row["extinct"]), row["D_T"]))
    res.extra.update({"T": report.T, "eps": report.eps})
    return res


def _count_moments(B: Interval, traj: Trajectory) -> dict:
    pop = traj.final
    if pop is None:
        return {"first": math.nan, "second": math.nan, "chi_mass": math.nan}
    c = float(pop.count(B))
    return {"first": c, "second": c * c, "chi_mass": pop.chi_mass}


def _run_spine_check(cfg, bc, workers):
    B = cfg.interval("B") or FULL_LINE
    motion, law, t = bc.motion, bc.offspring, bc.t_end

    batch = run_replicas(bc, cfg.n_rep, partial(_count_moments, B), workers)
    res = ExperimentResult("spine-check")
    res.absorb_batch(batch)
    est = {
        "engine_first_moment": batch.estimate("first"),
        "engine_second_moment": batch.estimate("second"),
        "engine_chi_mass": batch.estimate("chi_mass"),
        "many_to_one": many_to_one(motion, bc.x0, B, t, bc.r, law.m1, cfg.n_mc, cfg.seed, cfg.step_dt),
        "two_spine_second_moment": two_spine_second_moment(motion, bc.x0, B, t, bc.r, law, cfg.n_mc, cfg.seed,
                                                           cfg.step_dt),
        "h_martingale_mean": h_transform_expectation(motion, bc.x0, lambda ys: np.ones_like(ys), t, cfg.n_mc,
                                                     cfg.seed, cfg.step_dt),
        "chi_mass_target": EstimatorResult.exact(yule_first_moment(t, bc.r, law)),
    }
    if motion.name == "single_state" and B == FULL_LINE:
        est["yule_first_moment"] = EstimatorResult.exact(yule_first_moment(t, bc.r, law))
        est["yule_second_moment"] = EstimatorResult.exact(yule_second_moment(t, bc.r, law))
    res.estimators = est
    res.rows = [(name, e.mean, e.stderr, e.n) for name, e in est.items()]
    return res


def _run_g_iterate(cfg, bc, workers):
    result = g_iterate(cfg.x_grid, bc, cfg.n_iter, cfg.n_mc, workers)
    res = ExperimentResult("g-iterate")
    for k, values in enumerate(result.iterates):
        res.rows.extend((k, x, float(g)) for x, g in zip(result.x_grid, values))
    res.extra.update({
        "sup_change": result.sup_change() if cfg.n_iter >= 1 else None,
        "boundary_fraction": list(result.boundary_fraction),
        "limit": [float(v) for v in result.limit],
        "limit_stderr": [float(v) for v in result.stderrs[-1]],
    })
    if bc.motion.name == "single_state":
        res.extra["eta_closed_form"] = extinction_fixed_point(bc.offspring)
    return res


def _run_sb_curve(cfg, bc, workers):
    B = cfg.interval("B")
    motion = bc.motion
    curve = s_b_curve(motion, bc.x0, B, cfg.t_grid, cfg.n_mc, cfg.seed, cfg.step_dt)
    res = ExperimentResult("sb-curve")
    res.rows = [(d.t, d.estimate, d.stderr, d.n_eff) for d in curve]
    if has_density(motion):
        res.extra["reference"] = {f"t={d.t:g}": s_b_reference(motion, bc.x0, B, d.t) for d in curve}
    return res


def _run_local_survival(cfg, bc, workers):
    K = cfg.interval("K")
    batch = local_survival_batch(bc, K, bc.t_end, cfg.n_rep, workers)
    res = ExperimentResult("local-survival")
    res.absorb_batch(batch)
    for i in batch.usable():
        row = batch.rows[i]
        res.rows.append((i, int(row["count_K"]), int(row["live"])))
    res.estimators["local_survival"] = batch.estimate("local")
    survived = (batch.values("live") > 0).astype(float)
    res.estimators["survival"] = EstimatorResult.from_samples(survived)
    return res


_RUNNERS = {
    "simulate":       _run_simulate,
    "phi":            _run_phi,
    "lln":            _run_lln,
    "qsd":            _run_qsd,
    "extinction":     _run_extinction,
    "sigma":          _run_sigma,
    "spine-check":    _run_spine_check,
    "g-iterate":      _run_g_iterate,
    "sb-curve":       _run_sb_curve,
    "local-survival": _run_local_survival,
}
