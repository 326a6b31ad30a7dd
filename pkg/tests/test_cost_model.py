"""Cost-model variants: design matrices, OLS fitting, coefficient stores."""

import math

import numpy as np
import pytest

from ramp import (
    CostCoefficients,
    HardwareModel,
    ProfilingSample,
    fit,
    predict,
    profiling_plan,
)
from ramp.cost_model import (
    DEFAULT_BATCH_SIZES,
    DEFAULT_BETAS,
    coeff_store_dict,
    parse_coeff_store,
    predict_batch,
    r_squared,
    read_coeff_store,
    waves,
    write_coeff_store,
)

# Grids whose median sits below one wave but whose tail crosses it, so the
# P4 log term activates and the waves column is not constant.
SPANNING_GRIDS = (8, 16, 32, 64, 100, 200, 400)


def make_samples(coeff: CostCoefficients, hw: HardwareModel, grids=SPANNING_GRIDS):
    return [
        ProfilingSample(config_id=0, S=8, beta_target=0.5, seed=i, g=g,
                        time_us=predict(coeff, g, hw))
        for i, g in enumerate(grids)
    ]


class TestCoefficientValidation:
    def test_p2_only_stores_intercept_and_slope(self):
        CostCoefficients(a=1.0, b=0.0, c=0.1, d=0.0, uses_log=False, variant="P2")
        with pytest.raises(ValueError):
            CostCoefficients(a=1.0, b=2.0, c=0.1, d=0.0, uses_log=False, variant="P2")

    def test_p3_has_no_log_term(self):
        with pytest.raises(ValueError):
            CostCoefficients(a=1.0, b=2.0, c=0.1, d=0.5, uses_log=False, variant="P3")
        with pytest.raises(ValueError):
            CostCoefficients(a=1.0, b=2.0, c=0.1, d=0.0, uses_log=True, variant="P3")

    def test_log_coefficient_requires_active_log(self):
        with pytest.raises(ValueError):
            CostCoefficients(a=1.0, b=2.0, c=0.1, d=0.5, uses_log=False, variant="P4")
        CostCoefficients(a=1.0, b=2.0, c=0.1, d=0.5, uses_log=True, variant="P4")

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            CostCoefficients(a=1.0, b=0.0, c=0.1, d=0.0, uses_log=False, variant="P5")


def test_waves_is_ceiling_division(hw):
    assert waves(0, hw.sm_count) == 0
    assert waves(1, hw.sm_count) == 1
    assert waves(132, hw.sm_count) == 1
    assert waves(133, hw.sm_count) == 2
    assert np.array_equal(waves([0, 131, 264, 265], 132), [0.0, 1.0, 2.0, 3.0])


def test_predict_formula_by_hand(hw):
    c = CostCoefficients(a=10.0, b=3.0, c=0.25, d=1.5, uses_log=True, variant="P4")
    g = 100
    assert predict(c, g, hw) == pytest.approx(10.0 + 3.0 * 1 + 0.25 * 100 + 1.5 * math.log(101))
    with pytest.raises(ValueError):
        predict(c, -1, hw)


def test_predict_batch_matches_scalar_predict(hw):
    c = CostCoefficients(a=10.0, b=3.0, c=0.25, d=1.5, uses_log=True, variant="P4")
    grids = np.array([0, 8, 132, 133, 500])
    batch = predict_batch(
        np.array([c.a]), np.array([c.b]), np.array([c.c]), np.array([c.d]),
        grids, hw.sm_count,
    )
    # broadcasting: one config against many grids
    for g, t in zip(grids, np.atleast_1d(batch)):
        assert t == pytest.approx(predict(c, int(g), hw))


class TestExactRecovery:
    """OLS on noiseless model-generated data must return the generator."""

    def check(self, truth: CostCoefficients, hw: HardwareModel):
        report = fit(make_samples(truth, hw), hw, variant=truth.variant)
        got = report.coefficients
        for name in ("a", "b", "c", "d"):
            want = getattr(truth, name)
            tol = 1e-6 * max(1.0, abs(want))
            assert abs(getattr(got, name) - want) <= tol, (name, got, truth)
        assert report.r_squared == pytest.approx(1.0, abs=1e-9)
        assert not report.condition_flag

    def test_p2(self, hw):
        self.check(CostCoefficients(a=20.0, b=0.0, c=0.3, d=0.0,
                                    uses_log=False, variant="P2"), hw)

    def test_p3(self, hw):
        self.check(CostCoefficients(a=18.0, b=6.5, c=0.07, d=0.0,
                                    uses_log=False, variant="P3"), hw)

    def test_p4_with_log(self, hw):
        self.check(CostCoefficients(a=15.0, b=7.0, c=0.05, d=2.5,
                                    uses_log=True, variant="P4"), hw)

    def test_p4_log_disabled_above_one_wave(self, hw):
        # median grid >= sm_count: the fit must not include the log column
        truth = CostCoefficients(a=15.0, b=7.0, c=0.05, d=0.0,
                                 uses_log=False, variant="P4")
        grids = (140, 200, 300, 400, 520, 660)
        report = fit(make_samples(truth, hw, grids), hw, variant="P4")
        assert not report.coefficients.uses_log
        assert report.coefficients.d == 0.0
        assert report.median_grid >= hw.sm_count


def test_fit_survives_constant_waves_column(hw):
    # all grids below one wave: the waves column duplicates the intercept,
    # so the solver must drop a column instead of exploding
    truth = CostCoefficients(a=20.0, b=0.0, c=0.3, d=0.0, uses_log=False, variant="P2")
    samples = make_samples(truth, hw, grids=(8, 16, 24, 32, 48))
    report = fit(samples, hw, variant="P3")
    assert report.condition_flag
    for s in samples:
        assert predict(report.coefficients, s.g, hw) == pytest.approx(s.time_us, rel=1e-6)


class TestFitErrors:
    def test_needs_two_distinct_grids(self, hw):
        samples = [
            ProfilingSample(config_id=0, S=8, beta_target=0.5, seed=i, g=64, time_us=10.0)
            for i in range(5)
        ]
        with pytest.raises(ValueError, match="distinct grid"):
            fit(samples, hw)

    def test_needs_four_samples(self, hw):
        samples = [
            ProfilingSample(config_id=0, S=8, beta_target=0.5, seed=i, g=g, time_us=10.0 + g)
            for i, g in enumerate((8, 16, 32))
        ]
        with pytest.raises(ValueError, match=">= 4 samples"):
            fit(samples, hw)

    def test_rejects_unknown_variant(self, hw):
        truth = CostCoefficients(a=1.0, b=0.0, c=0.1, d=0.0, uses_log=False, variant="P2")
        with pytest.raises(ValueError, match="variant"):
            fit(make_samples(truth, hw), hw, variant="P9")

    def test_rejects_empty(self, hw):
        with pytest.raises(ValueError, match="empty"):
            fit([], hw)

    def test_sample_rejects_negative_grid(self):
        with pytest.raises(ValueError):
            ProfilingSample(config_id=0, S=8, beta_target=0.5, seed=0, g=-1, time_us=1.0)


def test_r_squared_perfect_and_flat(hw):
    truth = CostCoefficients(a=5.0, b=0.0, c=0.2, d=0.0, uses_log=False, variant="P2")
    samples = make_samples(truth, hw)
    assert r_squared(truth, samples, hw) == 1.0

    flat = [
        ProfilingSample(config_id=0, S=8, beta_target=0.5, seed=i, g=g, time_us=5.0)
        for i, g in enumerate((8, 16))
    ]
    constant = CostCoefficients(a=5.0, b=0.0, c=0.0, d=0.0, uses_log=False, variant="P2")
    assert r_squared(constant, flat, hw) == 1.0
    wrong = CostCoefficients(a=6.0, b=0.0, c=0.0, d=0.0, uses_log=False, variant="P2")
    assert r_squared(wrong, flat, hw) == float("-inf")


class TestProfilingPlan:
    def test_default_plan_covers_the_full_grid_when_reachable(self, olmoe_geom):
        plan = profiling_plan(olmoe_geom)
        assert len(plan) == len(DEFAULT_BATCH_SIZES) * len(DEFAULT_BETAS)
        assert (8, 1.0) in plan and (512, 0.3) in plan

    def test_unreachable_betas_are_dropped(self, olmoe_geom):
        # S=4, top_k=8 gives 32 assignments over 64 experts: beta=1 unreachable
        plan = profiling_plan(olmoe_geom, batch_sizes=(4,), betas=(0.3, 1.0))
        assert plan == [(4, 0.3)]

    def test_plan_points_are_ordered_by_batch_then_beta(self, tiny_geom):
        plan = profiling_plan(tiny_geom, batch_sizes=(8, 32), betas=(0.5, 1.0))
        assert plan == [(8, 0.5), (8, 1.0), (32, 0.5), (32, 1.0)]


class TestCoefficientStore:
    def test_round_trip(self, hw, tmp_path):
        truth = {
            0: CostCoefficients(a=15.0, b=7.0, c=0.05, d=2.5, uses_log=True, variant="P4"),
            3: CostCoefficients(a=12.0, b=5.0, c=0.08, d=0.0, uses_log=False, variant="P3"),
        }
        reports = {cid: fit(make_samples(co, hw), hw, variant=co.variant)
                   for cid, co in truth.items()}
        store = coeff_store_dict("demo", hw.sm_count, reports)
        path = tmp_path / "coeffs.json"
        write_coeff_store(path, store)
        model, sm_count, coeffs = parse_coeff_store(read_coeff_store(path))
        assert model == "demo"
        assert sm_count == hw.sm_count
        assert set(coeffs) == {0, 3}
        for cid, co in truth.items():
            assert coeffs[cid].variant == co.variant
            assert coeffs[cid].a == pytest.approx(co.a, rel=1e-6)
            assert coeffs[cid].uses_log == co.uses_log

    def test_parse_rejects_missing_keys(self):
        with pytest.raises(ValueError, match="missing key"):
            parse_coeff_store({"model": "x", "entries": []})
        with pytest.raises(ValueError, match="entry 0"):
            parse_coeff_store({"model": "x", "sm_count": 132,
                               "entries": [{"config_id": 0, "a": 1.0}]})
