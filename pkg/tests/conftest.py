import numpy as np
import pytest

from active_measure.pool import Unit, UnitPool


@pytest.fixture
def sim_pool():
    """Ten-unit simulation pool with mixed values including a zero."""
    values = [1.0, 2.0, 3.0, 4.0, 5.0, 0.0, 2.0, 7.0, 1.0, 3.0]
    return UnitPool([Unit(f"u{i}", f"ref{i}", v) for i, v in enumerate(values)])


@pytest.fixture
def positive_pool():
    """Fifty units, all values at or above 0.5 so a 0.5 floor clamp is a no-op."""
    rng = np.random.default_rng(123)
    values = rng.uniform(0.5, 12.0, 50)
    return UnitPool([Unit(f"u{i}", f"ref{i}", float(v)) for i, v in enumerate(values)])


@pytest.fixture
def live_pool():
    return UnitPool([Unit(f"u{i}", f"card:{i}", None) for i in range(8)])
