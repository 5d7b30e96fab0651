import sys
from pathlib import Path

import pytest

# Make the repo root importable as a flat package (same as running `python3 branch_cli.py`).
ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from core.model import BranchConfig  # noqa: E402
from core.motions import (  # noqa: E402
    ergodic_ctmc,
    killed_drifted_bm,
    killed_recurrent_ou,
    single_state,
    subcritical_gw,
    transient_ou,
)
from core.offspring import make_offspring  # noqa: E402


@pytest.fixture(scope="session")
def binary():
    """m ≡ 2."""
    return make_offspring({2: 1.0})


@pytest.fixture(scope="session")
def quarter_death():
    """P(m=0) = 1/4, P(m=2) = 3/4; extinction probability 1/3."""
    return make_offspring({0: 0.25, 2: 0.75})


@pytest.fixture(scope="session")
def bm():
    return killed_drifted_bm(1.0)


@pytest.fixture(scope="session")
def ou():
    return killed_recurrent_ou(1.0)


@pytest.fixture(scope="session")
def ou_image():
    return killed_recurrent_ou(1.0, crossing="image")


@pytest.fixture(scope="session")
def transient():
    return transient_ou(0.25, 1.0)


@pytest.fixture(scope="session")
def gw():
    return subcritical_gw({-1: 0.75, 1: 0.25})


@pytest.fixture(scope="session")
def two_state():
    return ergodic_ctmc([[-1.0, 1.0], [1.0, -1.0]], [0.5, 0.5])


@pytest.fixture(scope="session")
def point():
    return single_state()


@pytest.fixture
def yule_config(point, binary):
    """Pure binary splitting at rate 1; step_dt = 1 since the motion never moves."""
    return BranchConfig(motion=point, offspring=binary, r=1.0, x0=0.0, t_end=1.0, step_dt=1.0, seed=7)
