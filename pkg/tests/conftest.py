import numpy as np
import pytest

from glevy import JumpMeasure, UncertaintySet


@pytest.fixture
def sample_U():
    """One unit jump at rate 1, volatility in {0.5, 1}."""
    return UncertaintySet.build([JumpMeasure.atomic([[1.0]], [1.0])],
                                [np.array([[0.5]]), np.array([[1.0]])], ellipticity_floor=0.25)


@pytest.fixture
def vol_only_U():
    return UncertaintySet.build([], [np.array([[0.5]]), np.array([[1.0]])], dim=1)
