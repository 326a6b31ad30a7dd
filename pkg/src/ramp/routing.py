"""Expert routing histograms, the balancedness metric, and the CTA grid.

Routing determines kernel cost through a single object: the per-expert
assignment histogram of one forward step.  Its skew is summarized by the
entropy-normalized balancedness ``beta`` (1 = perfectly uniform, 0 = one
expert takes everything), and it drives the CTA grid

    g = (sum_e ceil(c_e / bm)) * ceil(N / ttn) * split_k,

the only runtime-varying input to the cost model.

Histograms at a requested skew use the smallest expert support the target
entropy admits (beta pins H(c), and H <= ln(active experts), so low beta
forces genuine concentration rather than a long tail of stragglers).  A
geometric tilt across that support is bisected to hit the target exactly,
then jittered and rounded, so realized beta tracks the target draw by draw.
beta_target = 1.0 bypasses sampling entirely and returns the exact
round-robin histogram.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .catalog import MoeGeometry
from .config_space import ConfigPool, HardwareModel, TileConfig, n_tiles

# Tolerance on expected realized beta, and the tilt solver's internals.
BETA_TOLERANCE = 0.03
_TILT_SHAPE_JITTER = 0.1  # lognormal sigma perturbing the solved weights
_SUPPORT_HEADROOM = 0.02  # nats of slack so the tilt stays interior


class BetaUnreachableError(ValueError):
    """The requested balancedness cannot be realized for (E, S*top_k)."""


@dataclass(frozen=True)
class ExpertHistogram:
    """Per-expert token-assignment counts for one step."""

    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.counts) == 0:
            raise ValueError("histogram needs at least one expert")
        if any(c < 0 for c in self.counts):
            raise ValueError("histogram counts must be non-negative")

    @property
    def E(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def active_experts(self) -> int:
        return sum(1 for c in self.counts if c > 0)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)


@dataclass(frozen=True)
class RoutingSample:
    histogram: ExpertHistogram
    beta_target: float
    beta_achieved: float
    seed: int


def balancedness(hist: ExpertHistogram) -> float:
    """Shannon entropy of the assignment distribution, normalized by ln E."""
    total = hist.total
    if total == 0:
        raise ValueError("balancedness undefined on an empty histogram (total = 0)")
    if hist.E == 1:
        return 1.0  # a single expert is trivially balanced by convention
    p = hist.as_array() / total
    nonzero = p[p > 0]
    entropy = float(-(nonzero * np.log(nonzero)).sum())
    return entropy / math.log(hist.E)


def round_robin(E: int, total: int) -> ExpertHistogram:
    """The most balanced integer histogram: counts differ by at most one."""
    base, extra = divmod(total, E)
    return ExpertHistogram(tuple(base + (1 if e < extra else 0) for e in range(E)))


def _entropy(p: np.ndarray) -> float:
    nonzero = p[p > 0]
    return float(-(nonzero * np.log(nonzero)).sum())


def _support_size(h_target: float, E: int, total: int) -> int:
    """Smallest expert support whose entropy range covers the target.

    ln k >= h is necessary; a little headroom keeps the tilt solver off the
    uniform boundary, where integer rounding would bias realized beta low.
    """
    k = max(int(math.ceil(math.exp(h_target))), 1)
    if k < E and math.log(k) < h_target + _SUPPORT_HEADROOM:
        k += 1
    return min(k, E, total)


def _tilted_weights(k: int, h_target: float) -> np.ndarray:
    """Geometric weights over k ranked experts with entropy h_target.

    w_i proportional to r^i; entropy runs monotonically from 0 (r -> 0) to
    ln k (r = 1), so bisection on r always lands inside the bracket.
    """
    if k == 1:
        return np.ones(1)
    if h_target >= math.log(k):
        return np.full(k, 1.0 / k)
    powers = np.arange(k, dtype=np.float64)
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        w = mid**powers if mid > 0 else np.concatenate(([1.0], np.zeros(k - 1)))
        w /= w.sum()
        if _entropy(w) < h_target:
            lo = mid
        else:
            hi = mid
    w = hi**powers
    return w / w.sum()


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to total, proportional to weights."""
    raw = weights * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def sample_histogram(
    E: int, S: int, top_k: int, beta_target: float, seed: int
) -> RoutingSample:
    """Draw one expert histogram with expected balancedness near the target."""
    if S < 1:
        raise ValueError(f"S must be >= 1, got {S}")
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    if not 0.0 <= beta_target <= 1.0:
        raise ValueError(f"beta_target must be in [0, 1], got {beta_target}")
    total = S * top_k

    if E == 1:
        # Only beta = 1 exists; anything meaningfully lower is unreachable.
        if beta_target < 1.0 - BETA_TOLERANCE:
            raise BetaUnreachableError(
                f"beta_target={beta_target} unreachable with E=1 (beta is always 1)"
            )
        return RoutingSample(ExpertHistogram((total,)), beta_target, 1.0, seed)

    most_balanced = round_robin(E, total)
    beta_max = balancedness(most_balanced)
    if beta_target > beta_max + BETA_TOLERANCE:
        raise BetaUnreachableError(
            f"beta_target={beta_target} unreachable: {total} assignments over "
            f"{E} experts cap balancedness at {beta_max:.4f}"
        )

    if beta_target == 1.0:
        return RoutingSample(most_balanced, beta_target, beta_max, seed)

    h_target = beta_target * math.log(E)
    k = _support_size(h_target, E, total)
    weights = _tilted_weights(k, h_target)
    rng = np.random.default_rng(seed)
    jittered = weights * np.exp(_TILT_SHAPE_JITTER * rng.standard_normal(k))
    support = _largest_remainder(jittered / jittered.sum(), total)
    counts = np.zeros(E, dtype=np.int64)
    counts[rng.permutation(E)[:k]] = support
    hist = ExpertHistogram(tuple(int(c) for c in counts))
    return RoutingSample(hist, beta_target, balancedness(hist), seed)


def grid_size(config: TileConfig, hist: ExpertHistogram, geom: MoeGeometry) -> int:
    """CTA grid for one histogram: M-tiles x N-stripes x split factor."""
    m_tiles = sum(-(-c // config.bm) for c in hist.counts if c > 0)
    return m_tiles * n_tiles(config, geom) * config.split_k


def m_tile_counts(counts: np.ndarray, bm_values: np.ndarray) -> np.ndarray:
    """Total M-tiles per bm value, vectorized over a (bm,) grid."""
    counts = counts[counts > 0]
    if counts.size == 0:
        return np.zeros(len(bm_values), dtype=np.int64)
    bm = np.asarray(bm_values, dtype=np.int64)[:, None]
    return ((counts[None, :] + bm - 1) // bm).sum(axis=1)


def pool_grids(pool: ConfigPool, hist: ExpertHistogram) -> np.ndarray:
    """Grid size for every pool config on one histogram.

    Element i equals grid_size(pool.by_id(i), hist, pool.geom); the ceil-divs
    are shared across configs with the same bm.
    """
    cols = pool.columns()
    unique_bm, inverse = np.unique(cols["bm"], return_inverse=True)
    m_tiles = m_tile_counts(hist.as_array(), unique_bm)[inverse]
    stripe_counts = -(-pool.geom.N // cols["ttn"])
    return m_tiles * stripe_counts * cols["split_k"]


def wave_utilization(g: int, hw: HardwareModel) -> float:
    """Fraction of one full wave the grid occupies (continuous, not ceiled)."""
    if g < 0:
        raise ValueError(f"grid size must be >= 0, got {g}")
    return g / hw.sm_count


def histogram_csv_header(E: int) -> str:
    return "seed,beta_target,beta_achieved," + ",".join(f"c_{e}" for e in range(E))


def sample_to_csv_row(sample: RoutingSample) -> str:
    prefix = f"{sample.seed},{sample.beta_target:.6f},{sample.beta_achieved:.6f}"
    return prefix + "," + ",".join(str(c) for c in sample.histogram.counts)


def parse_histogram_csv(text: str, E: int) -> list[RoutingSample]:
    """Parse the sample-routing CSV format back into samples."""
    lines = [line for line in text.strip().splitlines() if line.strip()]
    if not lines:
        raise ValueError("empty histogram CSV")
    expected_header = histogram_csv_header(E)
    if lines[0] != expected_header:
        raise ValueError(
            f"histogram CSV header mismatch: expected {expected_header!r}, got {lines[0]!r}"
        )
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3 + E:
            raise ValueError(f"row {lineno}: expected {3 + E} fields, got {len(parts)}")
        counts = tuple(int(c) for c in parts[3:])
        samples.append(
            RoutingSample(
                histogram=ExpertHistogram(counts),
                beta_target=float(parts[1]),
                beta_achieved=float(parts[2]),
                seed=int(parts[0]),
            )
        )
    return samples
