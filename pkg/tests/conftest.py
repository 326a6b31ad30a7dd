"""Shared fixtures: default hardware, one small synthetic geometry, OLMoE."""

import pytest

from ramp import (
    HardwareModel,
    MoeGeometry,
    classify_regime,
    enumerate_configs,
    find_model,
    region_variables,
)


def build_pool(geom: MoeGeometry, hw: HardwareModel):
    return enumerate_configs(geom, hw, classify_regime(region_variables(geom)))


@pytest.fixture(scope="session")
def hw():
    return HardwareModel()


@pytest.fixture(scope="session")
def tiny_geom():
    # kappa = 8 < 48 and weight_tiles = 8: no split-K or group_m variants,
    # and E = 4 keeps histogram math easy to check by hand
    return MoeGeometry(name="tiny", E=4, N=256, K=1024, top_k=2)


@pytest.fixture(scope="session")
def tiny_pool(tiny_geom, hw):
    return build_pool(tiny_geom, hw)


@pytest.fixture(scope="session")
def deep_geom():
    # kappa = 128 >= 48: the pool carries split-K variants
    return MoeGeometry(name="deep", E=32, N=1024, K=16384, top_k=8)


@pytest.fixture(scope="session")
def deep_pool(deep_geom, hw):
    return build_pool(deep_geom, hw)


@pytest.fixture(scope="session")
def olmoe_geom():
    return find_model("OLMoE")


@pytest.fixture(scope="session")
def olmoe_pool(olmoe_geom, hw):
    return build_pool(olmoe_geom, hw)
