"""Tests for core.offspring — pmf validation, moments, fixed point."""
import pytest

from core.errors import InvalidPmf, SubcriticalOffspring
from core.offspring import extinction_fixed_point, make_offspring
from core.rng import stream_for


def test_binary_moments(binary):
    assert binary.m1 == 2.0
    assert binary.m2 == 4.0
    assert binary.variance == 0.0


def test_string_keys_are_accepted():
    law = make_offspring({"0": 0.25, "2": 0.75})
    assert law.as_dict() == {0: 0.25, 2: 0.75}
    assert law.m1 == pytest.approx(1.5)
    assert law.m2 == pytest.approx(3.0)


@pytest.mark.parametrize("pmf", [{2: 0.5}, {2: 1.2, 0: -0.2}, {}, {"two": 1.0}, {-1: 0.5, 3: 0.5}])
def test_bad_pmfs_are_rejected(pmf):
    with pytest.raises(InvalidPmf):
        make_offspring(pmf)


@pytest.mark.parametrize("pmf", [{1: 1.0}, {0: 0.5, 2: 0.5}])
def test_mean_at_most_one_is_rejected(pmf):
    with pytest.raises(SubcriticalOffspring, match="mean must exceed 1"):
        make_offspring(pmf)


def test_sum_within_tolerance_passes():
    law = make_offspring({0: 0.1, 2: 0.2, 3: 0.7 + 1e-13})
    assert law.m1 > 1


def test_extinction_fixed_point(quarter_death, binary):
    assert extinction_fixed_point(quarter_death) == pytest.approx(1 / 3, abs=1e-12)
    assert extinction_fixed_point(binary) == 0.0


def test_sample_stays_on_support_and_is_reproducible(quarter_death):
    a = [quarter_death.sample(stream_for(3, (i,))) for i in range(200)]
    b = [quarter_death.sample(stream_for(3, (i,))) for i in range(200)]
    assert a == b
    assert set(a) <= {0, 2}
    assert 0 in a and 2 in a


def test_generating_function(quarter_death):
    assert quarter_death.generating(1.0) == pytest.approx(1.0)
    assert quarter_death.generating(0.0) == pytest.approx(0.25)
