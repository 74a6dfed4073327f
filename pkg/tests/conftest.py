import pytest
from hypothesis import settings

from planner import Archetype, LatencySlo, synth_archetype
from utils import Catalog

settings.register_profile("fleetwatt", max_examples=1000, deadline=None)
settings.load_profile("fleetwatt")


@pytest.fixture(scope="session")
def catalog():
    return Catalog.load()


@pytest.fixture(scope="session")
def h100(catalog):
    """Calibrated H100 / Llama-3.1-70B profile (budget 2^20 tokens)"""
    return catalog.profile("h100-llama70b")


@pytest.fixture(scope="session")
def b200(catalog):
    return catalog.profile("b200-llama70b")


@pytest.fixture(scope="session")
def short_dominant():
    return synth_archetype(Archetype.SHORT_DOMINANT)


@pytest.fixture(scope="session")
def slo():
    return LatencySlo(percentile=0.99, bound_ms=500.0)
