"""
Pytest configuration and shared fixtures for the test suite.

This module provides common fixtures, test configuration, and utilities
used across all test modules.
"""

import math
import shutil
import tempfile

import numpy as np
import pytest

from app.core.config import Settings
from app.models.lattice import LatticeGeometry, Spin, SpinorState
from app.services.coin_field import AnglePair, OpticsConfig, homogeneous_field, wall_field_1d
from app.services.edge_analysis import WALL_LEFT, WALL_RIGHT, find_edge_states
from app.services.protocol import ProtocolName, get_protocol


@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests."""
    temp_dir = tempfile.mkdtemp()
    yield temp_dir
    shutil.rmtree(temp_dir, ignore_errors=True)


@pytest.fixture
def test_settings(temp_dir):
    """Settings isolated from the environment, writing into the temp directory."""
    return Settings(output_dir=temp_dir, max_threads=2, trajectory_chunk_size=16)


@pytest.fixture
def ring():
    """Small periodic 1D lattice."""
    return LatticeGeometry.line(21)


@pytest.fixture
def plane():
    """Small periodic 2D lattice."""
    return LatticeGeometry.plane(8, 8)


@pytest.fixture
def split_step():
    return get_protocol(ProtocolName.SPLIT_STEP_1D)


@pytest.fixture
def walk_2d():
    return get_protocol(ProtocolName.WALK_2D)


@pytest.fixture
def hadamard_field(ring):
    """Homogeneous (pi/2, 0) field on the small ring."""
    return homogeneous_field(ring, math.pi / 2, 0.0)


@pytest.fixture
def random_state():
    """Factory for normalized random spinor states with a fixed seed."""
    def make(geometry, seed=0):
        rng = np.random.default_rng(seed)
        amplitudes = rng.normal(size=geometry.shape) + 1j * rng.normal(size=geometry.shape)
        return SpinorState(geometry, amplitudes / np.linalg.norm(amplitudes))
    return make


@pytest.fixture
def localized_down(ring):
    return SpinorState.localized(ring, (0,), Spin.DOWN)


@pytest.fixture(scope="session")
def wall_ring():
    """Sharp-ish domain wall ring between (0, 0) and (1, 0) bulks, walls 40 sites apart."""
    geometry = LatticeGeometry.line(80)
    optics = OpticsConfig.for_abbe_ratio(0.5)
    return wall_field_1d(AnglePair(*WALL_LEFT), AnglePair(*WALL_RIGHT), optics, geometry)


@pytest.fixture(scope="session")
def wall_edge(wall_ring):
    """eps = 0 edge state bound to the x = 0 wall of ``wall_ring``."""
    states = find_edge_states(get_protocol(ProtocolName.SPLIT_STEP_1D), wall_ring, '0')
    return next(s for s in states if s.wall == 0.0)


# Configure pytest markers
def pytest_configure(config):
    """Configure custom pytest markers."""
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (may be skipped in quick runs)"
    )
    config.addinivalue_line(
        "markers", "integration: marks tests as integration tests"
    )
    config.addinivalue_line(
        "markers", "unit: marks tests as unit tests"
    )


def pytest_collection_modifyitems(config, items):
    """Skip slow tests unless --runslow is given."""
    if config.getoption("--runslow"):
        return

    skip_slow = pytest.mark.skip(reason="need --runslow option to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def pytest_addoption(parser):
    """Add custom command line options."""
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow tests"
    )
