"""Shared fixtures for the wcsk test suite"""
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from wcsk.chart import sphere_moment
from wcsk.identity_suite import SamplePlan, default_roster
from wcsk.weights import Const


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def disk_points(rng):
    """Chart points of the sphere inside the disk of radius 2"""
    radius = 2.0 * np.sqrt(rng.uniform(size=12))
    angle = rng.uniform(0.0, 2.0 * math.pi, size=12)
    return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)


@pytest.fixture
def small_potential():
    """Invariant sphere potential well inside the Kähler cone"""
    return Const(0.1 / (8.0 * math.pi)) * sphere_moment(0)


@pytest.fixture(scope="session")
def roster():
    return default_roster(["constant", "exponential", "gaussian", "bump"])


@pytest.fixture(scope="session")
def small_plan(roster):
    return SamplePlan(chart="sphere", potentials=2, points=8, seed=7, roster=roster)
