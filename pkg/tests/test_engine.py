"""Tests for core.engine — single realizations and replica batches."""
import math
from functools import partial

import numpy as np
import pytest

from core.engine import run_replicas, simulate
from core.errors import InvalidConfig, PopulationOverflow
from core.model import BranchConfig, Interval
from core.rng import replica_seed


def test_t_end_zero_is_one_particle(bm, binary):
    traj = simulate(BranchConfig(motion=bm, offspring=binary, r=1.5, x0=2.0, t_end=0.0))
    assert traj.times == (0.0,)
    pop = traj.final
    assert len(pop) == 1
    assert pop.states.tolist() == [2.0]
    assert pop.labels == ((),)


def test_accounting_identity(bm, quarter_death):
    cfg = BranchConfig(motion=bm, offspring=quarter_death, r=2.0, x0=1.0, t_end=2.0,
                       snapshot_times=(0.5, 1.0, 2.0), step_dt=0.05)
    for seed in range(20):
        traj = simulate(cfg.with_(seed=seed))
        for pop in traj.snapshots:
            assert pop.births == len(pop) + pop.absorbed_count + pop.dead_count + pop.branched_count
            assert not np.isnan(pop.states).any()


def test_simulate_is_deterministic(ou, binary):
    cfg = BranchConfig(motion=ou, offspring=binary, r=1.5, x0=1.0, t_end=2.0, step_dt=0.05, seed=3)
    a, b = simulate(cfg), simulate(cfg)
    assert a.final.labels == b.final.labels
    assert np.array_equal(a.final.states, b.final.states)


def test_extinct_after_all_die(point):
    from core.offspring import make_offspring
    law = make_offspring({0: 0.6, 3: 0.4})
    cfg = BranchConfig(motion=point, offspring=law, r=1.0, x0=0.0, t_end=30.0, step_dt=1.0)
    extinct = [simulate(cfg.with_(seed=s)) for s in range(40)]
    for traj in extinct:
        if traj.final is not None and len(traj.final) == 0:
            assert traj.extinct_time is not None and traj.extinct_time <= 30.0
    assert any(t.extinct_time is not None for t in extinct)


def test_yule_mean(yule_config):
    batch = run_replicas(yule_config, 3000, lambda traj: {"size": float(len(traj.final))}, workers=1)
    est = batch.estimate("size")
    assert abs(est.mean - math.e) <= 4 * est.stderr


def test_overflow_truncates_and_strict_raises(yule_config):
    cfg = yule_config.with_(t_end=10.0, snapshot_times=(1.0, 10.0), max_population=5)
    traj = simulate(cfg)
    assert traj.overflowed
    assert traj.extinct_time is None
    assert len(traj.snapshots) < 2
    assert traj.at(10.0) is None
    with pytest.raises(PopulationOverflow) as info:
        simulate(cfg, strict=True)
    assert info.value.trajectory.overflowed


def test_run_replicas_single_matches_simulate(ou, binary):
    cfg = BranchConfig(motion=ou, offspring=binary, r=1.5, x0=1.0, t_end=1.0, step_dt=0.05, seed=21)
    batch = run_replicas(cfg, 1, lambda traj: {"live": float(len(traj.final))}, workers=1)
    direct = simulate(cfg.with_(seed=replica_seed(21, 0)))
    assert batch.rows[0]["live"] == len(direct.final)


def _count_and_sum(B, traj):
    return {"count": float(traj.final.count(B)), "sum": float(traj.final.states.sum())}


@pytest.mark.parametrize("workers", [2, 4])
def test_worker_count_does_not_change_results(bm, binary, workers):
    cfg = BranchConfig(motion=bm, offspring=binary, r=1.5, x0=1.0, t_end=1.0, step_dt=0.05, seed=5)
    reducer = partial(_count_and_sum, Interval(0, 2))
    one = run_replicas(cfg, 40, reducer, workers=1)
    many = run_replicas(cfg, 40, reducer, workers=workers)
    assert one.rows == many.rows
    assert one.overflowed == many.overflowed


def test_worker_count_does_not_change_jump_motion_batches(gw, quarter_death):
    cfg = BranchConfig(motion=gw, offspring=quarter_death, r=2.0, x0=3.0, t_end=1.5,
                       snapshot_times=(0.5, 1.5), seed=17)
    reducer = partial(_count_and_sum, Interval(1, 10))
    assert run_replicas(cfg, 30, reducer, workers=1).rows == run_replicas(cfg, 30, reducer, workers=3).rows


def test_process_pool_rejects_closures(bm, binary):
    cfg = BranchConfig(motion=bm, offspring=binary, r=1.5, x0=1.0, t_end=0.5, step_dt=0.05, seed=5)
    with pytest.raises(Exception, match="(?i)pickl"):
        run_replicas(cfg, 4, lambda traj: {"live": float(len(traj.final))}, workers=2)


def test_absorbed_jump_particles_are_counted_once(gw, binary):
    cfg = BranchConfig(motion=gw, offspring=binary, r=1.5, x0=1.0, t_end=3.0, snapshot_times=(1.0, 3.0), seed=2)
    for seed in range(30):
        traj = simulate(cfg.with_(seed=seed))
        for pop in traj.snapshots:
            assert pop.births == len(pop) + pop.absorbed_count + pop.dead_count + pop.branched_count
            assert pop.absorbed_count <= pop.births


def test_overflowed_replicas_are_excluded(yule_config):
    cfg = yule_config.with_(t_end=4.0, max_population=3)
    batch = run_replicas(cfg, 20, lambda traj: {"live": float(len(traj.snapshots))}, workers=1)
    assert batch.overflow_count > 0
    assert len(batch.usable()) == batch.n_rep - batch.overflow_count


def test_many_to_one_consistency(bm, binary):
    from core.spine import many_to_one
    B = Interval(0, 2)
    cfg = BranchConfig(motion=bm, offspring=binary, r=1.5, x0=1.0, t_end=1.0, step_dt=0.02, seed=8)
    batch = run_replicas(cfg, 2000, lambda traj: {"n": float(traj.final.count(B))}, workers=1)
    est = batch.estimate("n")
    target = many_to_one(bm, 1.0, B, 1.0, 1.5, 2.0).mean
    assert abs(est.mean - target) <= 4 * est.stderr


def test_growth_must_beat_lambda(ou, binary):
    with pytest.raises(InvalidConfig, match="growth rate must exceed"):
        BranchConfig(motion=ou, offspring=binary, r=1.0, x0=1.0, t_end=1.0)


def test_snapshot_times_validated(bm, binary):
    with pytest.raises(InvalidConfig):
        BranchConfig(motion=bm, offspring=binary, r=1.5, x0=1.0, t_end=1.0, snapshot_times=(0.5, 0.2))
    with pytest.raises(InvalidConfig):
        BranchConfig(motion=bm, offspring=binary, r=1.5, x0=1.0, t_end=1.0, snapshot_times=(2.0,))


def test_chi_mass_mean(bm, binary):
    cfg = BranchConfig(motion=bm, offspring=binary, r=1.5, x0=0.5, t_end=1.0, step_dt=0.02, seed=12)
    batch = run_replicas(cfg, 2000, lambda traj: {"chi": traj.final.chi_mass, "n": float(traj.final.chi_size)},
                         workers=1)
    est = batch.estimate("chi")
    assert abs(est.mean - math.exp(1.5)) <= 4 * est.stderr
    assert batch.estimate("n").mean <= est.mean
