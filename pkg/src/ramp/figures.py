"""PNG renderings of the evaluation reports.

Every figure is drawn next to its delimited twin: the CSV/JSON carries the
numbers, the PNG carries the shape.  Rendering is headless (Agg) and the PNG
metadata is pinned so report files are byte-stable across reruns.
"""

from __future__ import annotations

import dataclasses

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .catalog import MoeGeometry
from .config_space import ConfigPool, TileConfig
from .oracle import _EVAL_HIST_DOMAIN, OracleParams, derive_seed, simulate_pool_times, time_at_grid
from .routing import grid_size, round_robin, sample_histogram

_PNG_METADATA = {"Software": "ramp"}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


# ---------------------------------------------------------------- curve data


def omega_beta_rows(
    geom: MoeGeometry,
    config: TileConfig,
    S: int,
    betas: list[float],
    seeds_per_point: int,
    sm_count: int,
    master_seed: int = 42,
) -> list[tuple[float, float, float]]:
    """(beta, mean omega, std omega) of the config's grid at fixed S."""
    rows = []
    for beta in sorted(betas):
        omegas = []
        for rep in range(seeds_per_point):
            seed = derive_seed(master_seed, _EVAL_HIST_DOMAIN, S, round(beta * 1000), rep)
            routing = sample_histogram(geom.E, S, geom.top_k, beta, seed)
            omegas.append(grid_size(config, routing.histogram, geom) / sm_count)
        rows.append((beta, float(np.mean(omegas)), float(np.std(omegas))))
    return rows


def staircase_rows(
    config: TileConfig,
    geom: MoeGeometry,
    params: OracleParams,
    max_waves: int = 3,
) -> list[tuple[int, float]]:
    """Noiseless oracle time at every grid size up to max_waves full waves."""
    return [
        (g, time_at_grid(config, g, geom, params))
        for g in range(0, max_waves * params.sm_count + 1)
    ]


def crossover_rows(
    pool: ConfigPool,
    geom: MoeGeometry,
    params: OracleParams,
    bm_values: list[int],
    batch_sizes: list[int],
) -> list[tuple[int, int, float]]:
    """(S, bm, time_us): best noiseless oracle time among that bm's non-split
    configs at uniform routing, the per-bm crossover structure."""
    quiet = dataclasses.replace(params, noise_cv=0.0)
    cols = pool.columns()
    rows = []
    for S in batch_sizes:
        hist = round_robin(geom.E, S * geom.top_k)
        times = simulate_pool_times(pool, hist, quiet, point_seed=0)
        for bm in bm_values:
            mask = (cols["bm"] == bm) & (cols["split_k"] == 1)
            if mask.any():
                rows.append((S, bm, float(times[mask].min())))
    return rows


# ------------------------------------------------------------------ figures


def plot_regret(report, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    betas = sorted({r.beta for r in report.records})
    for beta in betas:
        pts = [(r.S, 100 * r.regret) for r in report.records if r.beta == beta]
        ax.scatter([p[0] for p in pts], [p[1] for p in pts], label=f"beta={beta:g}", alpha=0.7)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("batch size S")
    ax.set_ylabel("regret vs exhaustive search (%)")
    ax.set_title(f"selection regret (mean {100 * report.mean:.2f}%)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    _save(fig, path)


def plot_speedup(report, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    geo = report.per_beta_geomean()
    xs = np.arange(len(geo))
    ax.bar(xs, list(geo.values()), width=0.6, color="tab:blue")
    ax.axhline(1.0, color="black", linewidth=0.8)
    ax.set_xticks(xs, [f"{b:g}" for b in geo])
    ax.set_xlabel("balancedness target")
    ax.set_ylabel("geomean speedup vs static")
    ax.set_title("routing-aware vs static dispatch")
    ax.grid(True, axis="y", alpha=0.3)
    _save(fig, path)


def plot_ablation(reports: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    variants = list(reports)
    means = [100 * reports[v].mean for v in variants]
    ses = [100 * reports[v].se for v in variants]
    ax.bar(np.arange(len(variants)), means, yerr=ses, width=0.6, color="tab:orange", capsize=4)
    ax.set_xticks(np.arange(len(variants)), variants)
    ax.set_ylabel("mean regret (%)")
    ax.set_title("cost model variants")
    ax.grid(True, axis="y", alpha=0.3)
    _save(fig, path)


def plot_omega_beta(rows, S: int, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    betas = [r[0] for r in rows]
    means = np.array([r[1] for r in rows])
    stds = np.array([r[2] for r in rows])
    ax.plot(betas, means, marker="o", color="tab:green")
    ax.fill_between(betas, means - stds, means + stds, alpha=0.2, color="tab:green")
    ax.set_xlabel("balancedness target")
    ax.set_ylabel("wave utilization")
    ax.set_title(f"grid occupancy vs routing balance (S={S})")
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def plot_staircase(rows_by_label: dict, sm_count: int, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    max_g = 0
    for label, rows in rows_by_label.items():
        ax.plot([r[0] for r in rows], [r[1] for r in rows], label=label)
        max_g = max(max_g, rows[-1][0])
    for k in range(1, max_g // sm_count + 1):
        ax.axvline(k * sm_count, color="gray", linewidth=0.6, linestyle=":")
    ax.set_xlabel("grid size (CTAs)")
    ax.set_ylabel("time (us)")
    ax.set_title("wave quantization staircase")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_crossover(rows, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    bms = sorted({r[1] for r in rows})
    for bm in bms:
        pts = [(r[0], r[2]) for r in rows if r[1] == bm]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"bm={bm}")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("batch size S")
    ax.set_ylabel("best time at uniform routing (us)")
    ax.set_title("token-block crossovers")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)
