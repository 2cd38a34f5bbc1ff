import pytest

from dispersim.acceptance import RunCache


@pytest.fixture(scope="session")
def run_cache():
    """Reference trajectories shared across the acceptance criteria."""
    return RunCache()
