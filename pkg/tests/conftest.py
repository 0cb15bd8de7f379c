import pytest

from _support import std_profile


@pytest.fixture
def profile():
    """Axis-aligned 300 px calibration square, 6 ft edge, 100 px/ft."""
    return std_profile()
