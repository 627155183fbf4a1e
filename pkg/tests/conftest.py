import numpy as np
import pytest

from bb84sps.optics import DetectorParams, LinkParams
from bb84sps.protocol import SessionConfig, SessionSeeds
from bb84sps.sources import SourceModel

REF_MU = 0.0235
REF_R = 6.7
REF_ALPHA = 1.3e-2
REF_P_DARK_FIT = 3.5e-5
REF_ETA = 0.322
REF_DARK_RATES = (60.0, 70.0, 350.0, 150.0)


def default_config(**overrides) -> SessionConfig:
    """Session config at the reproduced experiment's parameters, with overrides."""
    params = dict(
        source=SourceModel.sps(REF_MU, REF_R),
        link=LinkParams(transmission=1.0, link_efficiency=REF_ETA),
        detector=DetectorParams(),
        seeds=SessionSeeds(),
        alpha=REF_ALPHA,
    )
    params.update(overrides)
    return SessionConfig(**params)


@pytest.fixture
def rng():
    return np.random.default_rng(20030917)
