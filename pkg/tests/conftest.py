import numpy as np
import pytest

from chartgan.chart_model import ManifoldSpec, build_atlas


@pytest.fixture
def separated_pair():
    """K=4, d=2 atlases with separation 20 and trace 0.01."""
    return build_atlas(4, 2, 20.0, 0.01, 11), build_atlas(4, 2, 20.0, 0.01, 12)


@pytest.fixture
def dirac_line():
    """Two near-Dirac scalar charts at 0 and 10."""
    return ManifoldSpec.from_means([[0.0], [10.0]], np.array([[1e-12]]))
