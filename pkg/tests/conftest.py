import numpy as np
import pytest

from octodesign.control import ControlGains
from octodesign.sizing import PlantDesign, assemble_vehicle, load_reference

# hand-picked stiff cascade used wherever a test only needs a stabilizing controller
HAND_GAINS = ControlGains(
    kp_x=1.0, kp_y=1.0, kp_z=1.0,
    kp_vx=3.0, kp_vy=3.0, kp_vz=6.0,
    ki_vx=1.5, ki_vy=1.5, ki_vz=3.0,
    kp_phi=6.0, kp_theta=6.0, kp_psi=2.0,
    kp_p=40.0, kp_q=40.0,
    kp_r=12.0, ki_r=5.0,
)


@pytest.fixture(scope="session")
def ref():
    return load_reference()


@pytest.fixture(scope="session")
def params(ref):
    return assemble_vehicle(PlantDesign.reference(), ref)


@pytest.fixture(scope="session")
def gains():
    return HAND_GAINS


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
