"""Runtime config selection and the evaluation harness around it.

Online path: bincount the routing decisions into a histogram, compute every
config's grid with shared ceil-divs, evaluate the fitted cost model in one
vectorized pass, argmin.  A per-step cache keyed on total token count makes
repeated layers free; split-K variants are dropped from the candidate set
whenever the live operating point fails the eligibility gate.

Offline path: regret against exhaustive search over the pool (selected and
best share one noise draw per operating point, so regret measures selection
quality rather than noise luck) and head-to-head speedup against static
dispatch, the pick-one-config-at-uniform-routing baseline.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .catalog import SPLIT_K_MIN_KAPPA, MoeGeometry, RegionVariables, region_variables
from .config_space import ConfigPool, EmptyPoolError
from .cost_model import CostCoefficients, predict_batch, profiling_plan
from .oracle import _EVAL_HIST_DOMAIN, _EVAL_NOISE_DOMAIN, OracleParams, derive_seed, simulate_pool_times
from .routing import ExpertHistogram, pool_grids, round_robin, sample_histogram

TEST_BATCH_SIZES = (8, 16, 32, 64, 128, 1024)
TEST_BETAS = (0.2, 0.5, 0.8, 1.0)
SPLIT_K_OMEGA_MAX = 0.2


def split_k_gate(vars: RegionVariables, omega: float) -> bool:
    """Split-K is worth considering iff the K-depth supports it and the
    non-split grid would leave most of the machine idle."""
    return vars.kappa >= SPLIT_K_MIN_KAPPA and omega < SPLIT_K_OMEGA_MAX


@dataclass
class StepCache:
    """Per-decode-step memo: total token count -> selected config id.

    One routing histogram serves every MoE layer of a step, so within a step
    the total M is a sufficient key; the map is dropped at each step boundary.
    """

    step_id: int | None = None
    selection: dict[int, int] = field(default_factory=dict)

    def advance(self, step_id: int) -> None:
        if step_id != self.step_id:
            self.step_id = step_id
            self.selection.clear()


@dataclass
class DispatchTable:
    """Everything the online selector needs: pool geometry plus four floats
    per config."""

    model: str
    pool: ConfigPool
    coefficients: dict[int, CostCoefficients]
    sm_count: int
    evaluations: int = 0  # running count of per-config cost evaluations

    def __post_init__(self) -> None:
        if len(self.pool) == 0:
            raise EmptyPoolError("dispatch table over an empty pool")
        pool_ids = {c.id for c in self.pool}
        missing = sorted(pool_ids - set(self.coefficients))
        extra = sorted(set(self.coefficients) - pool_ids)
        if missing or extra:
            raise ValueError(
                f"coefficient table does not match pool: missing ids {missing[:5]}, "
                f"unknown ids {extra[:5]}"
            )
        order = sorted(pool_ids)
        self._a = np.array([self.coefficients[i].a for i in order])
        self._b = np.array([self.coefficients[i].b for i in order])
        self._c = np.array([self.coefficients[i].c for i in order])
        self._d = np.array([self.coefficients[i].d for i in order])
        cols = self.pool.columns()
        self._split_k = cols["split_k"]
        self._kappa_ok = region_variables(self.pool.geom).kappa >= SPLIT_K_MIN_KAPPA


def select_config(
    table: DispatchTable,
    hist: ExpertHistogram,
    cache: StepCache | None,
    step_id: int,
) -> int:
    """Pick the config with the lowest predicted time for this histogram.

    Ties break to the lowest config id.  Split-K candidates are skipped when
    their non-split sibling grid already fills >= 20% of a wave (or the
    geometry is too shallow in K, in which case the pool has none anyway).
    """
    if cache is not None:
        cache.advance(step_id)
        cached = cache.selection.get(hist.total)
        if cached is not None:
            return cached

    grids = pool_grids(table.pool, hist)
    split = table._split_k > 1
    if split.any():
        base_omega = grids / table._split_k / table.sm_count
        gate_ok = table._kappa_ok & (base_omega < SPLIT_K_OMEGA_MAX)
        keep = ~split | gate_ok
    else:
        keep = np.ones(len(grids), dtype=bool)

    predicted = predict_batch(table._a, table._b, table._c, table._d, grids, table.sm_count)
    table.evaluations += int(keep.sum())
    predicted = np.where(keep, predicted, np.inf)
    selected = int(np.argmin(predicted))
    if cache is not None:
        cache.selection[hist.total] = selected
    return selected


def default_test_points(geom: MoeGeometry) -> list[tuple[int, float]]:
    """Held-out evaluation grid (includes S=1024, beyond the profiling plan),
    filtered to balancedness targets the geometry can reach."""
    return profiling_plan(geom, batch_sizes=TEST_BATCH_SIZES, betas=TEST_BETAS)


def static_best(
    pool: ConfigPool,
    geom: MoeGeometry,
    params: OracleParams,
    S_grid: list[int],
) -> int:
    """The one config a routing-blind autotuner would ship: lowest geomean
    oracle time over S_grid at exactly uniform routing.  Noise is disabled
    so the baseline is a deterministic function of the pool."""
    if not S_grid:
        raise ValueError("static_best needs at least one batch size")
    if len(pool) == 0:
        raise EmptyPoolError("static_best over an empty pool")
    quiet = dataclasses.replace(params, noise_cv=0.0)
    log_sum = np.zeros(len(pool))
    for S in S_grid:
        hist = round_robin(geom.E, S * geom.top_k)
        times = simulate_pool_times(pool, hist, quiet, point_seed=0)
        log_sum += np.log(times)
    return int(np.argmin(log_sum))


@dataclass(frozen=True)
class RegretRecord:
    S: int
    beta: float
    seed: int
    selected_id: int
    best_id: int
    selected_us: float
    best_us: float

    @property
    def regret(self) -> float:
        return self.selected_us / self.best_us - 1.0


@dataclass
class RegretReport:
    records: list[RegretRecord]

    @property
    def regrets(self) -> np.ndarray:
        return np.array([r.regret for r in self.records])

    @property
    def mean(self) -> float:
        return float(self.regrets.mean())

    @property
    def se(self) -> float:
        r = self.regrets
        if len(r) < 2:
            return 0.0
        return float(r.std(ddof=1) / math.sqrt(len(r)))

    @property
    def max(self) -> float:
        return float(self.regrets.max())

    def aggregate(self) -> dict:
        return {"mean": self.mean, "se": self.se, "max": self.max, "n": len(self.records)}

    def to_csv(self) -> str:
        lines = ["S,beta,seed,selected_id,best_id,selected_us,best_us,regret"]
        for r in self.records:
            lines.append(
                f"{r.S},{r.beta:.6g},{r.seed},{r.selected_id},{r.best_id},"
                f"{r.selected_us:.6f},{r.best_us:.6f},{r.regret:.6f}"
            )
        return "\n".join(lines) + "\n"


def evaluate_regret(
    table: DispatchTable,
    pool: ConfigPool,
    geom: MoeGeometry,
    params: OracleParams,
    test_points: list[tuple[int, float]] | None = None,
    seeds_per_point: int = 3,
    master_seed: int = 42,
) -> RegretReport:
    """Selection quality against exhaustive search.

    Every pool config is timed on the same histogram under one shared noise
    draw per point, so regret = selected/best - 1 measures selection quality
    alone (noise luck cancels in the ratio); it is >= 0 by construction and
    zero exactly when the table picks the oracle argmin.
    """
    points = default_test_points(geom) if test_points is None else test_points
    if not points:
        raise ValueError("no test points")
    records = []
    for S, beta in points:
        mbeta = round(beta * 1000)
        for rep in range(seeds_per_point):
            hist_seed = derive_seed(master_seed, _EVAL_HIST_DOMAIN, S, mbeta, rep)
            routing = sample_histogram(geom.E, S, geom.top_k, beta, hist_seed)
            point_seed = derive_seed(master_seed, _EVAL_NOISE_DOMAIN, S, mbeta, rep)
            times = simulate_pool_times(
                pool, routing.histogram, params, point_seed, shared_noise=True
            )
            selected = select_config(table, routing.histogram, StepCache(), step_id=0)
            best = int(np.argmin(times))
            records.append(
                RegretRecord(
                    S=S,
                    beta=beta,
                    seed=hist_seed,
                    selected_id=selected,
                    best_id=best,
                    selected_us=float(times[selected]),
                    best_us=float(times[best]),
                )
            )
    return RegretReport(records)


@dataclass(frozen=True)
class SpeedupRecord:
    S: int
    beta: float
    seed: int
    static_id: int
    selected_id: int
    static_us: float
    selected_us: float

    @property
    def ratio(self) -> float:
        return self.static_us / self.selected_us


@dataclass
class SpeedupReport:
    records: list[SpeedupRecord]

    def per_beta_geomean(self) -> dict[float, float]:
        by_beta: dict[float, list[float]] = {}
        for r in self.records:
            by_beta.setdefault(r.beta, []).append(math.log(r.ratio))
        return {b: math.exp(np.mean(v)) for b, v in sorted(by_beta.items())}

    @property
    def geomean(self) -> float:
        return math.exp(np.mean([math.log(r.ratio) for r in self.records]))

    def aggregate(self) -> dict:
        return {
            "geomean": self.geomean,
            "per_beta_geomean": {f"{b:.6g}": v for b, v in self.per_beta_geomean().items()},
            "n": len(self.records),
        }

    def to_csv(self) -> str:
        lines = ["S,beta,seed,static_id,selected_id,static_us,selected_us,ratio"]
        for r in self.records:
            lines.append(
                f"{r.S},{r.beta:.6g},{r.seed},{r.static_id},{r.selected_id},"
                f"{r.static_us:.6f},{r.selected_us:.6f},{r.ratio:.6f}"
            )
        return "\n".join(lines) + "\n"


def speedup_ra_vs_static(
    table: DispatchTable,
    pool: ConfigPool,
    geom: MoeGeometry,
    params: OracleParams,
    points: list[tuple[int, float]] | None = None,
    seeds_per_point: int = 3,
    master_seed: int = 42,
) -> SpeedupReport:
    """Oracle-time ratio static/RA per operating point, geomeaned per beta.

    The static baseline is chosen per batch size (the best routing-blind
    config for that S), which is the strongest version of the baseline: any
    gain left over is attributable to routing awareness alone.
    """
    points = default_test_points(geom) if points is None else points
    if not points:
        raise ValueError("no evaluation points")
    static_by_S: dict[int, int] = {}
    records = []
    for S, beta in points:
        if S not in static_by_S:
            static_by_S[S] = static_best(pool, geom, params, [S])
        static_id = static_by_S[S]
        mbeta = round(beta * 1000)
        for rep in range(seeds_per_point):
            hist_seed = derive_seed(master_seed, _EVAL_HIST_DOMAIN, S, mbeta, rep)
            routing = sample_histogram(geom.E, S, geom.top_k, beta, hist_seed)
            point_seed = derive_seed(master_seed, _EVAL_NOISE_DOMAIN, S, mbeta, rep)
            times = simulate_pool_times(
                pool, routing.histogram, params, point_seed, shared_noise=True
            )
            selected = select_config(table, routing.histogram, StepCache(), step_id=0)
            records.append(
                SpeedupRecord(
                    S=S,
                    beta=beta,
                    seed=hist_seed,
                    static_id=static_id,
                    selected_id=selected,
                    static_us=float(times[static_id]),
                    selected_us=float(times[selected]),
                )
            )
    return SpeedupReport(records)
