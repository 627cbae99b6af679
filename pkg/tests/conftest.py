import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from multihop import AlohaHopModel, HopCountPmf, hop_model_from_load, perhop_pmf

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def ref_hop():
    """theta = 0.03, q = 0.1, ten contending nodes, p from the contention fixed point."""
    return hop_model_from_load(0.03, 0.1, 10)


@pytest.fixture(scope="session")
def ref_hop_pmf(ref_hop):
    return perhop_pmf(ref_hop)


@pytest.fixture(scope="session")
def geo5():
    return HopCountPmf.geometric(0.2)


@st.composite
def pmfs(draw, max_phi=30):
    phi = draw(st.integers(1, max_phi))
    w = draw(st.lists(st.floats(0.0, 1.0), min_size=phi, max_size=phi))
    w = np.asarray(w)
    if w.sum() <= 1e-6:
        w[-1] = 1.0
    return HopCountPmf.normalized(w)


@st.composite
def stable_models(draw, allow_deterministic=False):
    hi = 1.0 if allow_deterministic else 0.98
    p = draw(st.floats(0.05, hi))
    q = draw(st.floats(0.05, 1.0))
    mean_x = 1 + (1 - p) / (p * q)
    frac = draw(st.floats(0.01, 0.9))
    theta = min(frac / mean_x, 0.9)
    return AlohaHopModel(p, q, theta)
