import numpy as np
import pytest

from app.services.basis_service import build_eigen_basis
from app.services.sphere_service import RadialProfile, radial_metric_assemble, round_metric


@pytest.fixture(scope="session")
def round3():
    return round_metric(3)


@pytest.fixture(scope="session")
def cosine3():
    return radial_metric_assemble(RadialProfile.cosine(0.3, 3))


@pytest.fixture(scope="session")
def round3_basis(round3):
    return build_eigen_basis(round3, 3)


@pytest.fixture(scope="session")
def round3_wide_basis(round3):
    """f_0..f_8: constant, four first harmonics, four of the second eigenspace"""
    return build_eigen_basis(round3, 9)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def cosine3_wide_basis(cosine3):
    return build_eigen_basis(cosine3, 9)
