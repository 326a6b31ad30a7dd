"""Ground-truth kernel times: a wave-quantization simulator plus trace ingestion.

Problem: the dispatch machinery needs something to be right *against*.  On
real hardware that is the kernel itself; at desk scale this module supplies a
simulator that encodes the physical effects the cost model is supposed to
approximate, without sharing its functional form.

Simulated time for a config on one routing histogram:

    T = startup(stg)
      + compute(config, g)
      + per_cta_traffic(config) * thrash(config) * g
      + splitk_overhead * [split_k > 1]
    scaled by multiplicative Gaussian noise (CV = noise_cv).

* startup grows with pipeline stages (fill cost): base + per_stage * stg.
* compute is the wave staircase.  One full wave costs wave_cost(config):
  the expert's whole weight stream in reference tiles (N*K / 32 KB) at
  wgmma_ns_per_tile each, scaled by row occupancy
  ``row_fill_floor + (1 - row_fill_floor) * bm / 64`` -- padded rows cost
  real time, which is what makes small bm win on skewed histograms.  At or
  above one wave, compute = wave_cost * ceil(g / SM).  Below one wave the
  curve ramps concavely from the single-CTA floor (one resident CTA still
  serializes its own ttn * K / split_k weight stream) up to a full wave:

      compute = cta_cost + (wave_cost - cta_cost) * (g / SM)^subwave_exponent

  The floor is what prices parallelism: wide-ttn configs halve their grid
  but double per-CTA work, so they lose below one wave and win above it,
  and split-K trades its quadrupled grid for a quartered floor.
* traffic charges one weight tile per CTA, doubled when the expert footprint
  overflows effective L2 (lam * kappa > 1440) and the grid is not swizzled;
  a swizzled grid that didn't need it pays a small bookkeeping fraction.

Noise seeds are explicit everywhere, so identical inputs give identical
times, profiling runs are resumable, and a selected config and the
exhaustive best can share one noise draw.

The external-trace path (``load_trace``) accepts the same CSV this module
writes, letting measured timings from a real kernel flow through fitting and
dispatch without any simulator involvement.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import GROUP_M_THRESHOLD, REF_TILE_BYTES, TILE_K_REF, MoeGeometry, region_variables
from .config_space import ConfigPool, TileConfig
from .cost_model import ProfilingSample
from .routing import ExpertHistogram, grid_size, pool_grids, sample_histogram

TRACE_HEADER = "config_id,S,beta_target,seed,grid,time_us"
WGMMA_ROW_GROUP = 64  # rows one WGMMA instruction group covers

# Seed-derivation domains, so histogram and noise draws never collide and the
# evaluation grid never reuses a profiling histogram at shared (S, beta).
_HIST_DOMAIN = 1
_NOISE_DOMAIN = 2
_EVAL_HIST_DOMAIN = 3
_EVAL_NOISE_DOMAIN = 4


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a tuple of integer keys."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class OracleParams:
    """Simulator knobs; defaults are anchored to H200-class constants."""

    startup_base_us: float = 14.0
    startup_per_stage_us: float = 2.0  # 5 stages reach the 24 us median
    wgmma_ns_per_tile: float = 130.0
    hbm_bw_bytes_per_s: float = 4.8e12
    l2_thrash_multiplier: float = 2.0
    groupm_overhead_frac: float = 0.02
    splitk_overhead_us: float = 12.5
    subwave_exponent: float = 0.4
    noise_cv: float = 0.01
    row_fill_floor: float = 0.2
    sm_count: int = 132
    elem_size: int = 1

    def __post_init__(self) -> None:
        for name in (
            "startup_base_us",
            "startup_per_stage_us",
            "wgmma_ns_per_tile",
            "hbm_bw_bytes_per_s",
            "l2_thrash_multiplier",
            "groupm_overhead_frac",
            "splitk_overhead_us",
            "sm_count",
            "elem_size",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"oracle param {name} must be strictly positive")
        if not 0.0 <= self.noise_cv <= 0.05:
            raise ValueError(f"noise_cv must be in [0, 0.05], got {self.noise_cv}")
        if not 0.0 < self.subwave_exponent <= 1.0:
            raise ValueError(f"subwave_exponent must be in (0, 1], got {self.subwave_exponent}")
        if not 0.0 < self.row_fill_floor <= 1.0:
            raise ValueError(f"row_fill_floor must be in (0, 1], got {self.row_fill_floor}")

    @classmethod
    def from_overrides(cls, overrides: dict) -> "OracleParams":
        unknown = set(overrides) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown oracle params: {sorted(unknown)}")
        return cls(**overrides)

    def startup_us(self, config: TileConfig) -> float:
        return self.startup_base_us + self.startup_per_stage_us * config.stg

    def row_factor(self, bm: int) -> float:
        return self.row_fill_floor + (1.0 - self.row_fill_floor) * bm / WGMMA_ROW_GROUP

    def wave_cost_us(self, config: TileConfig, geom: MoeGeometry) -> float:
        """One full wave of compute: reference weight tiles x per-tile cost x row fill."""
        rho_ref = geom.N * geom.K / REF_TILE_BYTES
        return rho_ref / config.split_k * self.row_factor(config.bm) * self.wgmma_ns_per_tile / 1000.0

    def cta_cost_us(self, config: TileConfig, geom: MoeGeometry) -> float:
        """Single-CTA compute floor: its own ttn-wide, split-K-deep weight stream.

        Capped at wave_cost so a ttn wider than N (one stripe covers
        everything) never inverts the sub-wave ramp.
        """
        tiles = min(config.ttn, geom.N) * geom.K / (config.split_k * REF_TILE_BYTES)
        return tiles * self.row_factor(config.bm) * self.wgmma_ns_per_tile / 1000.0

    def compute_us(self, config: TileConfig, g: int, geom: MoeGeometry) -> float:
        """The staircase: concave sub-wave ramp, then wave_cost per full wave."""
        if g <= 0:
            return 0.0
        if g >= self.sm_count:
            return self.wave_cost_us(config, geom) * float(np.ceil(g / self.sm_count))
        wave = self.wave_cost_us(config, geom)
        floor = self.cta_cost_us(config, geom)
        return floor + (wave - floor) * (g / self.sm_count) ** self.subwave_exponent

    def per_cta_traffic_us(self, config: TileConfig) -> float:
        return config.ttn * TILE_K_REF * self.elem_size / self.hbm_bw_bytes_per_s * 1e6

    def traffic_multiplier(self, config: TileConfig, geom: MoeGeometry) -> float:
        weight_tiles = region_variables(geom).weight_tiles
        if weight_tiles > GROUP_M_THRESHOLD and not config.group_m:
            return self.l2_thrash_multiplier
        if config.group_m and weight_tiles <= GROUP_M_THRESHOLD:
            return 1.0 + self.groupm_overhead_frac
        return 1.0


@dataclass
class TimingTrace:
    model: str
    samples: list[ProfilingSample]
    provenance: str  # "simulator" | "external"


def _noise_factor(params: OracleParams, seed: int) -> float:
    if params.noise_cv == 0.0:
        return 1.0
    draw = float(np.random.default_rng(seed).standard_normal())
    return max(1.0 + params.noise_cv * draw, 0.05)


def time_at_grid(config: TileConfig, g: int, geom: MoeGeometry, params: OracleParams) -> float:
    """Noiseless simulated time at an explicit grid size."""
    return (
        params.startup_us(config)
        + params.compute_us(config, g, geom)
        + params.per_cta_traffic_us(config) * params.traffic_multiplier(config, geom) * g
        + (params.splitk_overhead_us if config.split_k > 1 else 0.0)
    )


def simulate_time(
    config: TileConfig,
    hist: ExpertHistogram,
    geom: MoeGeometry,
    params: OracleParams,
    seed: int,
) -> float:
    """Simulated kernel time in microseconds for one config and histogram."""
    g = grid_size(config, hist, geom)
    return time_at_grid(config, g, geom, params) * _noise_factor(params, seed)


def simulate_pool_times(
    pool: ConfigPool,
    hist: ExpertHistogram,
    params: OracleParams,
    point_seed: int,
    grids: np.ndarray | None = None,
    shared_noise: bool = False,
) -> np.ndarray:
    """Oracle time for every pool config on one histogram.

    By default each config draws its own noise, as if timed in its own
    profiling run: entry i equals
    simulate_time(config_i, ..., seed=derive_seed(point_seed, i)).

    With shared_noise=True every config is scaled by the single factor drawn
    from point_seed itself (entry i equals simulate_time(config_i, ...,
    seed=point_seed)).  Evaluation uses this so comparisons between a
    selected config and the exhaustive best cancel the noise instead of
    rewarding whichever config got the luckier draw.
    """
    geom = pool.geom
    cols = pool.columns()
    if grids is None:
        grids = pool_grids(pool, hist)

    rho_ref = geom.N * geom.K / REF_TILE_BYTES
    row = params.row_fill_floor + (1.0 - params.row_fill_floor) * cols["bm"] / WGMMA_ROW_GROUP
    per_tile = row * params.wgmma_ns_per_tile / 1000.0
    wave_cost = rho_ref / cols["split_k"] * per_tile
    cta_cost = np.minimum(cols["ttn"], geom.N) * geom.K / (cols["split_k"] * REF_TILE_BYTES) * per_tile

    occupancy = np.maximum(grids, 0) / params.sm_count
    compute = np.where(
        grids < params.sm_count,
        cta_cost + (wave_cost - cta_cost) * np.power(occupancy, params.subwave_exponent),
        wave_cost * np.ceil(occupancy),
    )
    compute = np.where(grids <= 0, 0.0, compute)

    weight_tiles = region_variables(geom).weight_tiles
    traffic = cols["ttn"] * TILE_K_REF * params.elem_size / params.hbm_bw_bytes_per_s * 1e6
    if weight_tiles > GROUP_M_THRESHOLD:
        thrash = np.where(cols["group_m"], 1.0, params.l2_thrash_multiplier)
    else:
        thrash = np.where(cols["group_m"], 1.0 + params.groupm_overhead_frac, 1.0)

    startup = params.startup_base_us + params.startup_per_stage_us * cols["stg"]
    splitk = np.where(cols["split_k"] > 1, params.splitk_overhead_us, 0.0)
    base = startup + compute + traffic * thrash * grids + splitk

    if params.noise_cv == 0.0:
        return base
    if shared_noise:
        return base * _noise_factor(params, point_seed)
    factors = np.empty(len(base))
    for i in range(len(base)):
        factors[i] = _noise_factor(params, derive_seed(point_seed, i))
    return base * factors


def profile(
    pool: ConfigPool,
    geom: MoeGeometry,
    plan: list[tuple[int, float]],
    params: OracleParams,
    seeds_per_point: int = 3,
    master_seed: int = 42,
    trace_path: str | Path | None = None,
) -> TimingTrace:
    """Run the full profiling sweep: every config x plan point x routing seed.

    Sample identity (histogram seed, noise seed) derives from the master seed
    and the point coordinates, never from execution order, so interrupting
    and resuming an on-disk trace reproduces the byte-identical file.
    """
    if not plan:
        raise ValueError("profiling plan is empty")
    samples: list[ProfilingSample] = []
    for S, beta in plan:
        mbeta = round(beta * 1000)
        for rep in range(seeds_per_point):
            hist_seed = derive_seed(master_seed, _HIST_DOMAIN, S, mbeta, rep)
            routing = sample_histogram(geom.E, S, geom.top_k, beta, hist_seed)
            point_seed = derive_seed(master_seed, _NOISE_DOMAIN, S, mbeta, rep)
            grids = pool_grids(pool, routing.histogram)
            times = simulate_pool_times(pool, routing.histogram, params, point_seed, grids)
            for config in pool:
                samples.append(
                    ProfilingSample(
                        config_id=config.id,
                        S=S,
                        beta_target=beta,
                        seed=hist_seed,
                        g=int(grids[config.id]),
                        time_us=round(float(times[config.id]), 6),
                    )
                )
    trace = TimingTrace(model=geom.name, samples=samples, provenance="simulator")
    if trace_path is not None:
        _write_resumable(trace, Path(trace_path))
    return trace


def _sample_row(s: ProfilingSample) -> str:
    return f"{s.config_id},{s.S},{s.beta_target:.6g},{s.seed},{s.g},{s.time_us:.6f}"


def save_trace(trace: TimingTrace, path: str | Path) -> None:
    lines = [TRACE_HEADER] + [_sample_row(s) for s in trace.samples]
    Path(path).write_text("\n".join(lines) + "\n")


def _write_resumable(trace: TimingTrace, path: Path) -> None:
    """Append missing rows, verifying any existing prefix matches exactly."""
    new_lines = [TRACE_HEADER] + [_sample_row(s) for s in trace.samples]
    existing: list[str] = []
    if path.exists():
        existing = [line for line in path.read_text().splitlines() if line.strip()]
    if len(existing) > len(new_lines):
        raise ValueError(f"{path}: existing trace has more rows than this run produces")
    for i, line in enumerate(existing):
        if line != new_lines[i]:
            raise ValueError(
                f"{path}: line {i + 1} of the existing trace does not match this "
                f"run (different seed or plan?); refusing to append"
            )
    with path.open("a") as fh:
        for line in new_lines[len(existing):]:
            fh.write(line + "\n")


def load_trace(csv_path: str | Path, pool: ConfigPool | None = None) -> TimingTrace:
    """Parse a timing trace CSV; provenance is external by definition."""
    path = Path(csv_path)
    text = path.read_text()
    reader = csv.reader(io.StringIO(text))
    rows = [row for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: empty trace")
    if ",".join(rows[0]) != TRACE_HEADER:
        raise ValueError(f"{path}: bad header; expected {TRACE_HEADER!r}")
    known_ids = {c.id for c in pool} if pool is not None else None
    seen: set[tuple[int, int, float, int]] = set()
    samples = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 6:
            raise ValueError(f"{path}: row {lineno}: expected 6 fields, got {len(row)}")
        try:
            config_id, S, seed, g = int(row[0]), int(row[1]), int(row[3]), int(row[4])
            beta, time_us = float(row[2]), float(row[5])
        except ValueError as exc:
            raise ValueError(f"{path}: row {lineno}: {exc}") from exc
        if time_us <= 0:
            raise ValueError(f"{path}: row {lineno}: non-positive time {time_us}")
        if known_ids is not None and config_id not in known_ids:
            raise ValueError(f"{path}: row {lineno}: unknown config_id {config_id}")
        key = (config_id, S, beta, seed)
        if key in seen:
            raise ValueError(f"{path}: row {lineno}: duplicate sample {key}")
        seen.add(key)
        samples.append(
            ProfilingSample(
                config_id=config_id, S=S, beta_target=beta, seed=seed, g=g, time_us=time_us
            )
        )
    model = pool.geom.name if pool is not None else path.stem
    return TimingTrace(model=model, samples=samples, provenance="external")
