import numpy as np
import pytest
from hypothesis import settings

from agrinav.geometry import Intrinsics

settings.register_profile("harness", deadline=None, max_examples=60)
settings.load_profile("harness")


@pytest.fixture
def k64() -> Intrinsics:
    """Small square camera with integer principal point."""
    return Intrinsics(focal_x=50.0, focal_y=50.0, center_x=32.0, center_y=32.0, width=64, height=64)


@pytest.fixture
def k_wide() -> Intrinsics:
    """Memory-image shaped camera (16:9)."""
    return Intrinsics.from_fov(160, 90, hfov_deg=90.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240811)
