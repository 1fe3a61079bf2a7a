import numpy as np
import pytest

from app.schemas.system import ImpairmentProfile, Topology

from tests.factories import make_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def ideal():
    return ImpairmentProfile()


@pytest.fixture
def small_config():
    return make_config()


@pytest.fixture
def impaired():
    return ImpairmentProfile(
        sigma_phi2=1e-3,
        sigma_varphi2=5e-4,
        kappa_t2_bs=0.01,
        kappa_r2_bs=0.01,
        kappa_t2_ue=0.01,
        kappa_r2_ue=0.01,
        xi_bs=1.2,
        xi_ue=1.1,
        topology=Topology.SLO,
    )
