"""Shared fixtures: canonical networks and their enumerated geometry."""

from fractions import Fraction

import pytest

from swnet import presets
from swnet.geometry import critically_loaded, enumerate_dual_vertices


@pytest.fixture(scope="session")
def ex2():
    return presets.ex2()


@pytest.fixture(scope="session")
def ex2_vrs(ex2):
    return enumerate_dual_vertices(ex2)


@pytest.fixture(scope="session")
def ex2_clvr(ex2, ex2_vrs):
    clvr, clvr_plus = critically_loaded(ex2, [1, 1], ex2_vrs)
    return clvr


@pytest.fixture(scope="session")
def switch2():
    return presets.iq_switch(2)


@pytest.fixture(scope="session")
def switch2_vrs(switch2):
    return enumerate_dual_vertices(switch2)


@pytest.fixture(scope="session")
def switch2_lam():
    return [Fraction(1, 2)] * 4


@pytest.fixture(scope="session")
def switch2_clvr(switch2, switch2_vrs, switch2_lam):
    clvr, _ = critically_loaded(switch2, switch2_lam, switch2_vrs)
    return clvr


@pytest.fixture(scope="session")
def tandem2():
    return presets.tandem(2)


@pytest.fixture(scope="session")
def tandem2_clvr(tandem2):
    vrs = enumerate_dual_vertices(tandem2)
    # lam = (1, 0) aggregates to lam~ = (1, 1)
    clvr, _ = critically_loaded(tandem2, [1, 1], vrs)
    return clvr
