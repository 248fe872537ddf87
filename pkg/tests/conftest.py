import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))
sys.path.insert(0, os.path.dirname(__file__))

import numpy as np
import pytest

from oracle import DT, RABI, TAU
from qubit_arrow.state import SimParams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def qnd_params():
    return SimParams(dt=DT, tau=TAU, duration=0.32e-6, seed=3)


@pytest.fixture
def driven_params():
    return SimParams(dt=DT, tau=TAU, rabi=RABI, duration=0.32e-6, seed=5)

