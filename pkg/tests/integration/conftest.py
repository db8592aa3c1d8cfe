"""
Shared fixtures for integration tests.
"""

import pytest

from app.core.config import Settings


@pytest.fixture
def integration_settings(temp_dir):
    """Workstation-sized settings writing into the temp directory."""
    return Settings(output_dir=temp_dir, max_threads=4)
