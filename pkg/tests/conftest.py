import pytest

from schottkyflow import congruence, schottky, thermo


@pytest.fixture(scope="session")
def ref():
    return schottky.reference_group()


@pytest.fixture(scope="session")
def aux():
    return schottky.congruence_friendly_group()


@pytest.fixture(scope="session")
def gd16(ref):
    return thermo.gibbs_system(ref, 16)


@pytest.fixture(scope="session")
def gd12(ref):
    return thermo.gibbs_system(ref, 12)


@pytest.fixture(scope="session")
def gd24(ref):
    return thermo.gibbs_system(ref, 24)


@pytest.fixture(scope="session")
def mod2(ref):
    return congruence.build_modgroup(ref, 2)


@pytest.fixture(scope="session")
def mod3(ref):
    return congruence.build_modgroup(ref, 3)


@pytest.fixture(scope="session")
def mod6(ref):
    return congruence.build_modgroup(ref, 6)
