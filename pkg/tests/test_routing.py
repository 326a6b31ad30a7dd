"""Expert histograms: balancedness, the sampler, and grid-size arithmetic."""

import math

import numpy as np
import pytest

from ramp import (
    BetaUnreachableError,
    ExpertHistogram,
    MoeGeometry,
    TileConfig,
    balancedness,
    grid_size,
    round_robin,
    sample_histogram,
    wave_utilization,
)
from ramp.routing import (
    BETA_TOLERANCE,
    histogram_csv_header,
    m_tile_counts,
    parse_histogram_csv,
    pool_grids,
    sample_to_csv_row,
)


class TestHistogram:
    def test_needs_at_least_one_expert(self):
        with pytest.raises(ValueError, match="at least one"):
            ExpertHistogram(())

    def test_rejects_negative_counts(self):
        with pytest.raises(ValueError, match="non-negative"):
            ExpertHistogram((3, -1))

    def test_properties(self):
        h = ExpertHistogram((5, 0, 3, 0))
        assert h.E == 4
        assert h.total == 8
        assert h.active_experts == 2
        assert np.array_equal(h.as_array(), [5, 0, 3, 0])
        assert h.as_array().dtype == np.int64


class TestBalancedness:
    def test_round_robin_is_perfectly_balanced(self):
        for E, total in [(4, 16), (64, 64), (7, 7), (16, 4096)]:
            assert balancedness(round_robin(E, total)) == pytest.approx(1.0)

    def test_single_active_expert_scores_zero(self):
        assert balancedness(ExpertHistogram((12, 0, 0, 0))) == 0.0

    def test_single_expert_is_balanced_by_convention(self):
        assert balancedness(ExpertHistogram((9,))) == 1.0

    def test_empty_histogram_is_an_error(self):
        with pytest.raises(ValueError, match="total = 0"):
            balancedness(ExpertHistogram((0, 0)))

    def test_invariant_under_permutation(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            counts = rng.integers(0, 50, size=8)
            if counts.sum() == 0:
                counts[0] = 1
            h = ExpertHistogram(tuple(int(c) for c in counts))
            shuffled = ExpertHistogram(tuple(int(c) for c in rng.permutation(counts)))
            assert balancedness(h) == pytest.approx(balancedness(shuffled))

    def test_matches_entropy_by_hand(self):
        # (2, 2, 4, 0): H = -(.25 ln .25)*2 - .5 ln .5 = 1.5 ln 2
        h = ExpertHistogram((2, 2, 4, 0))
        assert balancedness(h) == pytest.approx(1.5 * math.log(2) / math.log(4))


def test_round_robin_spreads_the_remainder():
    assert round_robin(4, 10).counts == (3, 3, 2, 2)
    assert round_robin(4, 12).counts == (3, 3, 3, 3)
    assert round_robin(5, 3).counts == (1, 1, 1, 0, 0)


class TestSampler:
    def test_deterministic_per_seed(self):
        a = sample_histogram(64, 128, 8, 0.5, seed=7)
        b = sample_histogram(64, 128, 8, 0.5, seed=7)
        assert a.histogram.counts == b.histogram.counts
        assert a.beta_achieved == b.beta_achieved

    def test_seeds_produce_different_draws(self):
        a = sample_histogram(64, 128, 8, 0.5, seed=0)
        b = sample_histogram(64, 128, 8, 0.5, seed=1)
        assert a.histogram.counts != b.histogram.counts

    def test_total_is_conserved(self):
        for beta in (0.0, 0.2, 0.5, 0.8, 1.0):
            s = sample_histogram(16, 32, 4, beta, seed=3)
            assert s.histogram.total == 32 * 4

    def test_achieved_beta_tracks_target(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            E = int(rng.choice([8, 16, 64]))
            S = int(rng.choice([32, 128, 512]))
            beta = float(rng.choice([0.2, 0.4, 0.6, 0.8]))
            s = sample_histogram(E, S, 4, beta, seed=int(rng.integers(1 << 30)))
            assert abs(s.beta_achieved - beta) <= BETA_TOLERANCE + 0.05
            assert s.beta_achieved == pytest.approx(
                balancedness(s.histogram), abs=1e-12
            )

    def test_fully_balanced_target_bypasses_sampling(self):
        s = sample_histogram(8, 16, 2, 1.0, seed=99)
        assert s.histogram.counts == round_robin(8, 32).counts
        assert s.beta_achieved == pytest.approx(1.0)

    def test_beta_zero_concentrates_on_one_expert(self):
        s = sample_histogram(16, 64, 2, 0.0, seed=123)
        assert s.histogram.active_experts == 1
        assert s.beta_achieved == 0.0

    def test_unreachable_target_is_an_error(self):
        # 2 assignments over 64 experts cap entropy at ln 2
        with pytest.raises(BetaUnreachableError, match="cap balancedness"):
            sample_histogram(64, 1, 2, 0.5, seed=0)

    def test_single_expert_only_reaches_one(self):
        s = sample_histogram(1, 8, 2, 1.0, seed=0)
        assert s.histogram.counts == (16,)
        with pytest.raises(BetaUnreachableError, match="E=1"):
            sample_histogram(1, 8, 2, 0.5, seed=0)

    def test_argument_validation(self):
        with pytest.raises(ValueError, match="S must be"):
            sample_histogram(4, 0, 2, 0.5, seed=0)
        with pytest.raises(ValueError, match="top_k must be"):
            sample_histogram(4, 8, 0, 0.5, seed=0)
        with pytest.raises(ValueError, match="beta_target must be"):
            sample_histogram(4, 8, 2, 1.5, seed=0)


class TestGridSize:
    def test_by_hand(self, tiny_geom):
        config = TileConfig(id=0, bm=32, bn=64, wn=4, stg=2, ttn=256)
        hist = ExpertHistogram((33, 0, 64, 1))
        # ceil(33/32) + ceil(64/32) + ceil(1/32) = 2 + 2 + 1; one N stripe
        assert grid_size(config, hist, tiny_geom) == 5

    def test_zero_counts_launch_nothing(self, tiny_geom):
        config = TileConfig(id=0, bm=32, bn=64, wn=4, stg=2, ttn=256)
        assert grid_size(config, ExpertHistogram((0, 0, 0, 0)), tiny_geom) == 0

    def test_matches_naive_oracle_on_random_instances(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            E = int(rng.integers(1, 33))
            counts = tuple(int(c) for c in rng.integers(0, 201, size=E))
            bm = int(rng.choice(np.arange(2, 105, 2)))
            ttn, bn, wn = (256, 64, 4) if rng.random() < 0.5 else (512, 128, 4)
            split = int(rng.choice([1, 4]))
            N = int(rng.integers(1, 4097))
            K = int(rng.integers(1, 8193))
            geom = MoeGeometry(name="r", E=E, N=N, K=K, top_k=1)
            config = TileConfig(id=0, bm=bm, bn=bn, wn=wn, stg=1, ttn=ttn, split_k=split)
            expected = (
                sum(math.ceil(c / bm) for c in counts if c > 0)
                * math.ceil(N / ttn)
                * split
            )
            assert grid_size(config, ExpertHistogram(counts), geom) == expected

    def test_m_tile_counts_matches_scalar_loop(self):
        rng = np.random.default_rng(23)
        bm_values = np.arange(2, 105, 2)
        for _ in range(20):
            counts = rng.integers(0, 120, size=16)
            vec = m_tile_counts(counts, bm_values)
            for j, bm in enumerate(bm_values):
                assert vec[j] == sum(math.ceil(c / bm) for c in counts if c > 0)

    def test_pool_grids_matches_per_config_calls(self, tiny_pool, tiny_geom):
        hist = sample_histogram(4, 64, 2, 0.5, seed=9).histogram
        grids = pool_grids(tiny_pool, hist)
        for c in tiny_pool:
            assert grids[c.id] == grid_size(c, hist, tiny_geom)


def test_wave_utilization(hw):
    assert wave_utilization(66, hw) == pytest.approx(0.5)
    assert wave_utilization(132, hw) == pytest.approx(1.0)
    assert wave_utilization(264, hw) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        wave_utilization(-1, hw)


class TestHistogramCsv:
    def test_round_trip(self):
        samples = [sample_histogram(8, 32, 2, b, seed=s) for s, b in enumerate((0.3, 0.7, 1.0))]
        text = histogram_csv_header(8) + "\n" + "\n".join(sample_to_csv_row(s) for s in samples)
        parsed = parse_histogram_csv(text, 8)
        assert len(parsed) == 3
        for orig, back in zip(samples, parsed):
            assert back.histogram.counts == orig.histogram.counts
            assert back.seed == orig.seed
            assert back.beta_target == pytest.approx(orig.beta_target, abs=1e-6)
            assert back.beta_achieved == pytest.approx(orig.beta_achieved, abs=1e-6)

    def test_empty_text_is_an_error(self):
        with pytest.raises(ValueError, match="empty"):
            parse_histogram_csv("", 4)

    def test_header_mismatch_is_an_error(self):
        with pytest.raises(ValueError, match="header mismatch"):
            parse_histogram_csv(histogram_csv_header(4) + "\n1,0.5,0.5,1,1,1,1", 8)

    def test_wrong_field_count_names_the_row(self):
        text = histogram_csv_header(4) + "\n7,0.5,0.5,1,2,3"
        with pytest.raises(ValueError, match="row 2"):
            parse_histogram_csv(text, 4)
