"""Tile configs, hardware constraints, and pool enumeration."""

import numpy as np
import pytest

from ramp import (
    EmptyPoolError,
    HardwareModel,
    MoeGeometry,
    TileConfig,
    classify_regime,
    enumerate_configs,
    find_model,
    region_variables,
    smem_usage,
)
from ramp.config_space import (
    BM_VALUES,
    FACTORIZATIONS,
    SPLIT_K_FACTOR,
    ConfigPool,
    is_valid,
    n_tiles,
)


def build_pool(geom, hw):
    return enumerate_configs(geom, hw, classify_regime(region_variables(geom)))


def cfg(**kw):
    base = dict(id=0, bm=64, bn=64, wn=4, stg=2, ttn=256)
    base.update(kw)
    return TileConfig(**base)


class TestTileConfigValidation:
    def test_accepts_both_factorizations(self):
        cfg(bn=64, wn=4, ttn=256)
        cfg(bn=128, wn=2, ttn=256)
        cfg(bn=128, wn=4, ttn=512)
        cfg(bn=256, wn=2, ttn=512)

    def test_ttn_must_match_bn_times_wn(self):
        with pytest.raises(ValueError, match="bn\\*wn"):
            cfg(bn=64, wn=4, ttn=512)

    def test_ttn_must_be_a_known_width(self):
        with pytest.raises(ValueError, match="ttn must be one of"):
            cfg(bn=64, wn=2, ttn=128)

    def test_stage_bounds(self):
        with pytest.raises(ValueError, match="stg"):
            cfg(stg=0)
        with pytest.raises(ValueError, match="stg"):
            cfg(stg=6)

    def test_bm_must_be_even_in_range(self):
        with pytest.raises(ValueError, match="bm"):
            cfg(bm=3)
        with pytest.raises(ValueError, match="bm"):
            cfg(bm=0)
        with pytest.raises(ValueError, match="bm"):
            cfg(bm=106)

    def test_split_k_is_one_or_the_fixed_factor(self):
        cfg(split_k=1)
        cfg(split_k=SPLIT_K_FACTOR)
        with pytest.raises(ValueError, match="split_k"):
            cfg(split_k=2)

    def test_to_dict_round_trips(self):
        c = cfg(group_m=True)
        assert TileConfig(**c.to_dict()) == c


class TestHardwareModel:
    def test_rejects_non_positive_fields(self):
        with pytest.raises(ValueError, match="sm_count"):
            HardwareModel(sm_count=0)
        with pytest.raises(ValueError, match="elem_size"):
            HardwareModel(elem_size=-1)

    def test_rejects_l2_above_physical_cap(self):
        with pytest.raises(ValueError, match="60 MB"):
            HardwareModel(l2_effective=61 * (1 << 20))

    def test_from_overrides_rejects_unknown_fields(self):
        with pytest.raises(ValueError, match="unknown hardware fields"):
            HardwareModel.from_overrides({"smm_count": 100})
        hw = HardwareModel.from_overrides({"sm_count": 108})
        assert hw.sm_count == 108

    def test_to_dict_round_trips(self, hw):
        assert HardwareModel.from_overrides(hw.to_dict()) == hw


def test_smem_usage_formula(hw):
    c = cfg(bm=64, stg=3, ttn=256)
    assert smem_usage(c, hw) == 3 * (64 + 256) * 128 * hw.elem_size


def test_smem_boundary_for_wide_deep_configs(hw, tiny_geom):
    # stg=3 at ttn=512 fits up to bm=92 under the 227 KB budget
    ok = cfg(bm=92, bn=128, wn=4, ttn=512, stg=3)
    too_big = cfg(bm=94, bn=128, wn=4, ttn=512, stg=3)
    assert smem_usage(ok, hw) <= hw.smem_capacity < smem_usage(too_big, hw)
    assert is_valid(ok, hw, tiny_geom)
    assert not is_valid(too_big, hw, tiny_geom)


def test_split_k_invalid_on_shallow_reduction(hw, tiny_geom, deep_geom):
    c = cfg(split_k=4)
    assert not is_valid(c, hw, tiny_geom)  # kappa = 8
    assert is_valid(c, hw, deep_geom)  # kappa = 128


def test_n_tiles_is_ceiling_of_stripe_count():
    geom = MoeGeometry(name="x", E=4, N=600, K=1024, top_k=2)
    assert n_tiles(cfg(ttn=256), geom) == 3
    assert n_tiles(cfg(bn=128, wn=4, ttn=512), geom) == 2


class TestEnumeration:
    def test_ids_are_dense_and_ordered(self, tiny_pool):
        for i, c in enumerate(tiny_pool):
            assert c.id == i
            assert tiny_pool.by_id(i) == c

    def test_every_member_is_valid(self, tiny_pool, hw, tiny_geom):
        assert all(is_valid(c, hw, tiny_geom) for c in tiny_pool)

    def test_ordering_key(self, tiny_pool):
        keys = [(c.bm, c.ttn, c.stg, c.group_m, c.split_k, c.bn) for c in tiny_pool]
        assert keys == sorted(keys)
        assert len(set(keys)) == len(keys)

    def test_base_pool_size_is_the_smem_filtered_cartesian_product(self, tiny_pool, hw):
        expected = 0
        for bm in BM_VALUES:
            for ttn, pairs in FACTORIZATIONS.items():
                for bn, wn in pairs:
                    for stg in range(1, 6):
                        c = TileConfig(id=0, bm=bm, bn=bn, wn=wn, stg=stg, ttn=ttn)
                        expected += smem_usage(c, hw) <= hw.smem_capacity
        assert len(tiny_pool) == expected == 820

    def test_shallow_geometry_has_no_split_or_group_m(self, tiny_pool):
        assert all(c.split_k == 1 and not c.group_m for c in tiny_pool)

    def test_deep_geometry_doubles_with_split_variants(self, deep_pool):
        split = [c for c in deep_pool if c.split_k != 1]
        assert len(split) == len(deep_pool) - len(split) == 820

    def test_thrashing_geometry_doubles_with_group_m(self, hw):
        pool = build_pool(find_model("Mixtral"), hw)
        grouped = [c for c in pool if c.group_m]
        assert len(grouped) == len(pool) // 2
        assert pool.regime.group_m_required

    def test_enumeration_is_deterministic(self, tiny_geom, hw, tiny_pool):
        again = build_pool(tiny_geom, hw)
        assert again.configs == tiny_pool.configs

    def test_empty_pool_is_an_error(self, tiny_geom):
        starved = HardwareModel(smem_capacity=1)
        regime = classify_regime(region_variables(tiny_geom))
        with pytest.raises(EmptyPoolError):
            enumerate_configs(tiny_geom, starved, regime)


class TestPoolSerialization:
    def test_columns_match_configs(self, deep_pool):
        cols = deep_pool.columns()
        assert np.array_equal(cols["bm"], [c.bm for c in deep_pool])
        assert np.array_equal(cols["split_k"], [c.split_k for c in deep_pool])
        assert cols["group_m"].dtype == bool

    def test_from_dicts_round_trips(self, tiny_pool, tiny_geom, hw):
        rebuilt = ConfigPool.from_dicts(
            tiny_geom, hw, tiny_pool.regime, tiny_pool.to_dicts()
        )
        assert rebuilt.configs == tiny_pool.configs

    def test_from_dicts_rejects_scrambled_ids(self, tiny_pool, tiny_geom, hw):
        dicts = tiny_pool.to_dicts()
        dicts[0], dicts[1] = dicts[1], dicts[0]
        with pytest.raises(ValueError, match="dense"):
            ConfigPool.from_dicts(tiny_geom, hw, tiny_pool.regime, dicts)

    def test_from_dicts_rejects_invalid_members(self, tiny_pool, tiny_geom, hw):
        dicts = tiny_pool.to_dicts()
        dicts[0] = dict(dicts[0], split_k=4)  # kappa too small for split
        with pytest.raises(ValueError, match="violates"):
            ConfigPool.from_dicts(tiny_geom, hw, tiny_pool.regime, dicts)
