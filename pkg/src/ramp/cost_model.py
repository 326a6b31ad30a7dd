"""The four-term wave cost model and its ordinary-least-squares fitting.

Predicted kernel time for one config as a function of its CTA grid g:

    T(g) = a + b * waves(g) + c * g + d * ln(g + 1)

where ``waves(g) = ceil(g / sm_count)`` is the number of sequential waves the
grid needs.  The terms mirror the physical decomposition: fixed startup (a),
wave scheduling (b), per-CTA traffic (c), and sub-wave concavity (d).  The
wave column uses the integer wave count rather than the continuous ratio
g/SM: the continuous ratio is exactly collinear with the per-CTA column, and
the staircase is what lets OLS separate b from c.

Three nested variants support the ablation study: P2 fits [1, g]; P3 adds
the wave column; P4 additionally activates the log term, but only when the
config's median profiling grid sits below one wave (where concavity is
observable).  Coefficients are unconstrained; small negative values are
legitimate since predictions feed an argmin, not a physical report.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import MoeGeometry
from .config_space import ConfigPool, HardwareModel
from .routing import round_robin, balancedness, BETA_TOLERANCE

VARIANTS = ("P2", "P3", "P4")
DEFAULT_BATCH_SIZES = (8, 32, 64, 128, 512)
DEFAULT_BETAS = (0.3, 0.5, 0.6, 0.7, 1.0)
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class CostCoefficients:
    """Fitted (a, b, c, d) for one config; four floats, nothing else."""

    a: float
    b: float
    c: float
    d: float
    uses_log: bool
    variant: str

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "P2" and (self.b != 0.0 or self.d != 0.0):
            raise ValueError("P2 stores the slope in c; b and d must be 0")
        if self.variant == "P3" and self.d != 0.0:
            raise ValueError("P3 has no log term; d must be 0")
        if self.uses_log and self.variant != "P4":
            raise ValueError("uses_log is a P4-only behavior")
        if not self.uses_log and self.d != 0.0:
            raise ValueError("d must be 0 when the log term is inactive")


@dataclass(frozen=True)
class ProfilingSample:
    config_id: int
    S: int
    beta_target: float
    seed: int
    g: int
    time_us: float

    def __post_init__(self) -> None:
        if self.g < 0:
            raise ValueError(f"grid must be >= 0, got {self.g}")
        if self.time_us <= 0:
            raise ValueError(f"time must be positive, got {self.time_us}")


@dataclass(frozen=True)
class FitReport:
    coefficients: CostCoefficients
    r_squared: float
    n_samples: int
    median_grid: float
    condition_flag: bool


def waves(g, sm_count: int):
    """Sequential wave count: ceil(g / sm_count); works on scalars and arrays."""
    return np.ceil(np.asarray(g, dtype=np.float64) / sm_count)


def predict(coeff: CostCoefficients, g: int, hw: HardwareModel) -> float:
    """Predicted time in microseconds at grid size g."""
    if g < 0:
        raise ValueError(f"grid must be >= 0, got {g}")
    t = coeff.a + coeff.b * float(waves(g, hw.sm_count)) + coeff.c * g
    if coeff.uses_log:
        t += coeff.d * math.log(g + 1)
    return t


def predict_batch(
    a: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    d: np.ndarray,
    g: np.ndarray,
    sm_count: int,
) -> np.ndarray:
    """Vectorized predict over parallel coefficient and grid arrays."""
    g = np.asarray(g, dtype=np.float64)
    return a + b * np.ceil(g / sm_count) + c * g + d * np.log(g + 1.0)


def _design_matrix(g: np.ndarray, sm_count: int, variant: str, use_log: bool) -> np.ndarray:
    cols = [np.ones_like(g, dtype=np.float64)]
    if variant in ("P3", "P4"):
        cols.append(waves(g, sm_count))
    cols.append(g.astype(np.float64))
    if use_log:
        cols.append(np.log(g + 1.0))
    return np.column_stack(cols)


def _solve_scaled(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, list[int], bool]:
    """Normal-equations solve with column scaling; drops dependent columns.

    Returns (coefficients aligned to X's columns, kept column indices,
    fallback_used).  Columns are preferred left to right, so a dependent
    column is dropped from the right.
    """
    scale = np.abs(X).max(axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale

    p = Xs.shape[1]
    kept = list(range(p))
    fallback = False
    if np.linalg.matrix_rank(Xs) < p:
        fallback = True
        kept = []
        for j in range(p):
            trial = kept + [j]
            if np.linalg.matrix_rank(Xs[:, trial]) > len(kept):
                kept.append(j)
    Xk = Xs[:, kept]
    gram = Xk.T @ Xk
    if not fallback and np.linalg.cond(gram) > _COND_LIMIT:
        fallback = True
    if fallback and len(kept) == p:
        # Ill-conditioned but formally full rank: fall back to least squares
        # on the scaled design, which tolerates near-dependence.
        beta_s = np.linalg.lstsq(Xk, y, rcond=None)[0]
    else:
        beta_s = np.linalg.solve(gram, Xk.T @ y)
    beta = np.zeros(p)
    beta[kept] = beta_s / scale[kept]
    return beta, kept, fallback


def fit(samples: list[ProfilingSample], hw: HardwareModel, variant: str = "P4") -> FitReport:
    """Fit one config's coefficients from its profiling samples."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if not samples:
        raise ValueError("cannot fit on empty samples")
    g = np.array([s.g for s in samples], dtype=np.int64)
    y = np.array([s.time_us for s in samples], dtype=np.float64)
    if len(np.unique(g)) < 2:
        raise ValueError("cannot fit a slope: need >= 2 distinct grid values")
    if len(samples) < 4:
        raise ValueError(f"need >= 4 samples, got {len(samples)}")

    median_grid = float(np.median(g))
    use_log = variant == "P4" and median_grid < hw.sm_count
    X = _design_matrix(g, hw.sm_count, variant, use_log)
    beta, _, fallback = _solve_scaled(X, y)

    if variant == "P2":
        coeff = CostCoefficients(
            a=beta[0], b=0.0, c=beta[1], d=0.0, uses_log=False, variant="P2"
        )
    else:
        d = beta[3] if use_log else 0.0
        coeff = CostCoefficients(
            a=beta[0], b=beta[1], c=beta[2], d=d, uses_log=use_log, variant=variant
        )
    return FitReport(
        coefficients=coeff,
        r_squared=r_squared(coeff, samples, hw),
        n_samples=len(samples),
        median_grid=median_grid,
        condition_flag=fallback,
    )


def r_squared(coeff: CostCoefficients, samples: list[ProfilingSample], hw: HardwareModel) -> float:
    """Coefficient of determination on the given samples; -inf flags a broken fit."""
    if len(samples) < 2:
        raise ValueError("r_squared needs >= 2 samples")
    y = np.array([s.time_us for s in samples])
    pred = np.array([predict(coeff, s.g, hw) for s in samples])
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 1.0 if ss_res <= 1e-12 * max(1.0, float((y**2).sum())) else float("-inf")
    return 1.0 - ss_res / ss_tot


def profiling_plan(
    geom: MoeGeometry,
    pool: ConfigPool | None = None,
    batch_sizes: tuple[int, ...] = DEFAULT_BATCH_SIZES,
    betas: tuple[float, ...] = DEFAULT_BETAS,
) -> list[tuple[int, float]]:
    """The (S, beta) profiling grid, filtered to points reachable for the geometry.

    The default grid is 5 batch sizes x 5 balancedness levels; a point is
    dropped only when S*top_k assignments over E experts cannot realize the
    requested beta (e.g. beta=1.0 with fewer assignments than experts).
    """
    plan = []
    for S in batch_sizes:
        total = S * geom.top_k
        beta_max = balancedness(round_robin(geom.E, total)) if geom.E > 1 else 1.0
        for beta in betas:
            if beta <= beta_max + BETA_TOLERANCE:
                plan.append((S, beta))
    return plan


def coeff_store_dict(model: str, sm_count: int, reports: dict[int, FitReport]) -> dict:
    """Serializable coefficient store, one entry per config id."""
    entries = []
    for config_id in sorted(reports):
        rep = reports[config_id]
        co = rep.coefficients
        entries.append(
            {
                "config_id": config_id,
                "a": co.a,
                "b": co.b,
                "c": co.c,
                "d": co.d,
                "uses_log": co.uses_log,
                "variant": co.variant,
                "r_squared": rep.r_squared,
            }
        )
    return {"model": model, "sm_count": sm_count, "entries": entries}


def parse_coeff_store(data: dict) -> tuple[str, int, dict[int, CostCoefficients]]:
    """Inverse of coeff_store_dict; validates required fields."""
    for key in ("model", "sm_count", "entries"):
        if key not in data:
            raise ValueError(f"coefficient store missing key {key!r}")
    coeffs = {}
    for i, entry in enumerate(data["entries"]):
        missing = {"config_id", "a", "b", "c", "d", "uses_log", "variant"} - set(entry)
        if missing:
            raise ValueError(f"store entry {i} missing fields {sorted(missing)}")
        coeffs[entry["config_id"]] = CostCoefficients(
            a=entry["a"],
            b=entry["b"],
            c=entry["c"],
            d=entry["d"],
            uses_log=entry["uses_log"],
            variant=entry["variant"],
        )
    return data["model"], data["sm_count"], coeffs


def write_coeff_store(path: str | Path, store: dict) -> None:
    Path(path).write_text(json.dumps(store, indent=2, sort_keys=True) + "\n")


def read_coeff_store(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
