"""Tests for core.spine and core.oracle — many-to-few estimators against closed forms."""
import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from core.errors import MissingNuMass, ZeroEigenfunction
from core.model import FULL_LINE, Interval
from core.oracle import m_second_moment_closed, m_second_moment_quad, prob_in
from core.rng import CTX_SPINE, stream_for
from core.spine import (
    h_transform_expectation,
    many_to_one,
    m_second_moment,
    positions,
    require_h,
    s_b_curve,
    s_b_reference,
    sample_two_spine,
    two_spine_second_moment,
    yule_first_moment,
    yule_second_moment,
)


def test_yule_closed_forms(binary):
    assert yule_first_moment(1.0, 1.0, binary) == pytest.approx(math.e)
    assert yule_second_moment(1.0, 1.0, binary) == pytest.approx(2 * math.e ** 2 - math.e)
    assert yule_second_moment(0.0, 1.0, binary) == pytest.approx(1.0)


@pytest.mark.parametrize("fixture, x, s", [
    ("bm", 1.0, 1.0),
    ("bm", 0.5, 3.0),
    ("ou", 1.0, 1.0),
    ("ou", 2.0, 0.5),
    ("transient", 0.5, 1.0),
    ("transient", -1.0, 2.0),
])
def test_second_moment_closed_form_matches_quadrature(request, fixture, x, s):
    motion = request.getfixturevalue(fixture)
    closed = m_second_moment_closed(motion, x, s)
    assert closed == pytest.approx(m_second_moment_quad(motion, x, s), rel=1e-6)


def test_second_moment_closed_form_ergodic(two_state, gw):
    assert m_second_moment_closed(two_state, 0, 5.0) == 1.0
    assert m_second_moment_closed(gw, 3, 1.0) is None


def test_second_moment_monte_carlo_for_gw(gw):
    est = m_second_moment(gw, 3.0, 1.0, n_mc=5000, seed=1)
    assert not est.analytic
    assert est.mean > 1.0


def test_many_to_one_uses_quadrature(bm):
    B = Interval(0, 2)
    est = many_to_one(bm, 1.0, B, 1.0, 1.5, 2.0)
    assert est.analytic
    assert est.mean == pytest.approx(math.exp(1.5) * prob_in(bm, 1.0, B, 1.0))


def test_many_to_one_monte_carlo_for_gw(gw):
    est = many_to_one(gw, 5.0, FULL_LINE, 1.0, 1.0, 2.0, n_mc=4000, seed=2)
    assert not est.analytic
    assert 0 < est.mean <= math.e


def test_h_transform_mean_is_one(ou):
    est = h_transform_expectation(ou, 1.0, lambda ys: np.ones_like(ys), 1.0, n_mc=20_000, seed=3)
    assert abs(est.mean - 1.0) <= 4 * est.stderr
    assert est.n_eff > 100
    assert not est.low_ess


def test_h_transform_low_ess_flag(bm):
    est = h_transform_expectation(bm, 1.0, lambda ys: np.ones_like(ys), 1.0, n_mc=50, seed=3)
    assert est.low_ess


def test_require_h(bm):
    assert require_h(bm, 1.0) > 0
    with pytest.raises(ZeroEigenfunction):
        require_h(bm, 0.0)
    with pytest.raises(ZeroEigenfunction):
        require_h(bm, math.nan)


def test_two_spine_yule(point, binary):
    est = two_spine_second_moment(point, 0.0, FULL_LINE, 1.0, 1.0, binary, n_mc=20_000, seed=4)
    assert abs(est.mean - (2 * math.e ** 2 - math.e)) <= 4 * est.stderr


def test_two_spine_samples_share_position_before_split(point, binary):
    samples = sample_two_spine(point, 0.0, 1.0, 1.0, binary, 200, stream_for(5, (), CTX_SPINE))
    for s in samples:
        assert 0 <= s.split_time <= 1.0
        assert s.weight == pytest.approx(math.exp(s.split_time))
        assert s.x1 == s.x2 == 0.0


def test_s_b_reference_decays(bm):
    B = Interval(0, 2)
    early, late = s_b_reference(bm, 1.0, B, 2.0), s_b_reference(bm, 1.0, B, 8.0)
    assert abs(late) < abs(early)


def test_s_b_curve_tracks_reference(ou_image):
    B = Interval(0, 1)
    curve = s_b_curve(ou_image, 1.0, B, [0.5, 2.0], n_mc=20_000, seed=6)
    for d in curve:
        ref = s_b_reference(ou_image, 1.0, B, d.t)
        assert abs(d.estimate - ref) <= 4 * d.stderr + 1e-9
        assert d.n_eff > 100


def test_s_b_curve_needs_nu(gw):
    with pytest.raises(MissingNuMass):
        s_b_curve(gw, 3.0, Interval(1, 3), [1.0])


def test_two_spine_marginals_follow_the_motion(bm, binary):
    samples = sample_two_spine(bm, 1.0, 1.0, 1.5, binary, 4000, stream_for(7, (), CTX_SPINE), step_dt=0.1)
    plain = positions(bm, 1.0, 1.0, 4000, stream_for(8, (), CTX_SPINE), step_dt=0.1)
    plain = np.where(np.isnan(plain), -1.0, plain)
    for which in ("x1", "x2"):
        ys = np.array([getattr(s, which) for s in samples])
        assert ks_2samp(np.where(np.isnan(ys), -1.0, ys), plain).pvalue > 0.001
    split = np.array([s.split_time for s in samples])
    assert np.mean(split < 1.0) == pytest.approx(1 - math.exp(-(binary.m2 - binary.m1) * 1.5), abs=0.03)
