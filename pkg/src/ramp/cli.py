"""Command-line workflow around the library: enumerate -> profile -> fit ->
dispatch/evaluate, plus the regime classifier and a routing sampler.

Artifacts live in a per-model workspace directory:

    <workspace>/<model>/pool.json     enumerated configs + hardware + regime
    <workspace>/<model>/trace.csv     profiling samples (append-only)
    <workspace>/<model>/coeffs.json   fitted cost-model coefficients
    <workspace>/<model>/reports/      evaluation CSV/JSON and PNG figures

Every command is deterministic given its inputs and the master seed
(RAMP_MASTER_SEED or --seed): reruns rewrite byte-identical artifacts.
Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 check
failure.
"""

from __future__ import annotations

import argparse
import fcntl
import json
import os
import sys
import time
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import figures
from .catalog import (
    EXPECTED_CLASSIFICATION,
    MoeGeometry,
    RegimeReport,
    classify_regime,
    find_model,
    load_catalog,
    region_variables,
)
from .config_space import ConfigPool, HardwareModel, enumerate_configs
from .cost_model import (
    coeff_store_dict,
    fit,
    parse_coeff_store,
    predict,
    profiling_plan,
    read_coeff_store,
    write_coeff_store,
)
from .dispatch import (
    DispatchTable,
    StepCache,
    evaluate_regret,
    select_config,
    speedup_ra_vs_static,
    static_best,
)
from .oracle import OracleParams, derive_seed, load_trace, profile, save_trace
from .routing import (
    ExpertHistogram,
    grid_size,
    histogram_csv_header,
    parse_histogram_csv,
    sample_histogram,
    sample_to_csv_row,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3

DEFAULT_MASTER_SEED = 42
_SAMPLE_DOMAIN = 5  # seed-derivation namespace for the sample-routing command


class DataError(Exception):
    """Missing or invalid input artifact; maps to exit code 2."""


class CheckFailure(Exception):
    """A --check comparison failed; maps to exit code 3."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad usage; this tool reserves 2 for data
    # errors, so remap usage problems to 1
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class Workspace:
    """Per-model artifact paths under the workspace root."""

    def __init__(self, root: str | Path, model: str):
        self.root = Path(root)
        self.model_dir = self.root / model
        self.pool_path = self.model_dir / "pool.json"
        self.trace_path = self.model_dir / "trace.csv"
        self.coeffs_path = self.model_dir / "coeffs.json"
        self.reports_dir = self.model_dir / "reports"

    def ensure(self) -> None:
        self.model_dir.mkdir(parents=True, exist_ok=True)


@contextmanager
def _workspace_lock(root: str | Path):
    """Advisory lock: concurrent commands on one workspace are refused."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    fh = open(root / ".lock", "w")
    try:
        fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
    except OSError:
        fh.close()
        raise DataError(f"workspace {root} is in use by another command")
    try:
        yield
    finally:
        fcntl.flock(fh, fcntl.LOCK_UN)
        fh.close()


def _master_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get("RAMP_MASTER_SEED", DEFAULT_MASTER_SEED))


def _hardware(args) -> HardwareModel:
    if getattr(args, "hw", None):
        overrides = json.loads(Path(args.hw).read_text())
        return HardwareModel.from_overrides(overrides)
    return HardwareModel()


def _oracle_spec(spec: str) -> tuple[str, OracleParams | Path]:
    if spec == "sim":
        return "sim", OracleParams()
    if spec.startswith("sim:"):
        overrides = json.loads(Path(spec[4:]).read_text())
        return "sim", OracleParams.from_overrides(overrides)
    if spec.startswith("trace:"):
        return "trace", Path(spec[6:])
    raise DataError(f"--oracle must be sim, sim:<params.json>, or trace:<csv>; got {spec!r}")


def _sim_params(args) -> OracleParams:
    kind, value = _oracle_spec(args.oracle)
    if kind != "sim":
        raise DataError("this command needs a simulator oracle (--oracle sim[:params.json])")
    return value


def _geometry(args) -> MoeGeometry:
    try:
        return find_model(args.model)
    except KeyError as exc:
        raise DataError(str(exc.args[0])) from exc


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: str, rows: list[str]) -> None:
    path.write_text("\n".join([header] + rows) + "\n")


def _require(path: Path, hint: str) -> None:
    if not path.exists():
        raise DataError(f"{path} not found; {hint}")


def _load_pool(ws: Workspace) -> ConfigPool:
    _require(ws.pool_path, "run `ramp enumerate` first")
    payload = json.loads(ws.pool_path.read_text())
    for key in ("geometry", "hw", "regime", "configs"):
        if key not in payload:
            raise DataError(f"{ws.pool_path}: missing key {key!r}")
    geom = MoeGeometry(**payload["geometry"])
    hw = HardwareModel(**payload["hw"])
    regime = RegimeReport(**payload["regime"])
    return ConfigPool.from_dicts(geom, hw, regime, payload["configs"])


def _load_table(ws: Workspace, pool: ConfigPool) -> DispatchTable:
    _require(ws.coeffs_path, "run `ramp fit` first")
    model, sm_count, coeffs = parse_coeff_store(read_coeff_store(ws.coeffs_path))
    if sm_count != pool.hw.sm_count:
        raise DataError(
            f"{ws.coeffs_path}: fitted at sm_count={sm_count}, pool has {pool.hw.sm_count}"
        )
    return DispatchTable(model=model, pool=pool, coefficients=coeffs, sm_count=sm_count)


def _fmt_rational(x: Fraction) -> str:
    return str(int(x)) if x.denominator == 1 else f"{float(x):g}"


# ------------------------------------------------------------------ commands


def cmd_enumerate(args) -> int:
    geom = _geometry(args)
    hw = _hardware(args)
    vars = region_variables(geom)
    regime = classify_regime(vars)
    pool = enumerate_configs(geom, hw, regime)
    ws = Workspace(args.workspace, geom.name)
    ws.ensure()
    payload = {
        "model": geom.name,
        "geometry": {
            "name": geom.name,
            "E": geom.E,
            "N": geom.N,
            "K": geom.K,
            "top_k": geom.top_k,
        },
        "hw": hw.to_dict(),
        "regime": {
            "regime": regime.regime,
            "group_m_required": regime.group_m_required,
            "split_k_eligible": regime.split_k_eligible,
            "ttn512_preferred_when_multiwave": regime.ttn512_preferred_when_multiwave,
        },
        "configs": pool.to_dicts(),
    }
    _write_json(ws.pool_path, payload)
    summary = {
        "model": geom.name,
        "configs": len(pool),
        "regime": regime.regime,
        "modes": regime.predicted_modes,
        "rho": float(vars.rho),
        "lam": vars.lam,
        "kappa": float(vars.kappa),
    }
    if args.json:
        print(json.dumps(summary, indent=2))
    else:
        print(
            f"{geom.name}: {len(pool)} configs -> {ws.pool_path}\n"
            f"regime {regime.regime} ({regime.predicted_modes}); "
            f"rho={_fmt_rational(vars.rho)} lam={vars.lam} kappa={_fmt_rational(vars.kappa)}"
        )
    return EXIT_OK


def cmd_profile(args) -> int:
    geom = _geometry(args)
    ws = Workspace(args.workspace, geom.name)
    pool = _load_pool(ws)
    kind, value = _oracle_spec(args.oracle)
    if kind == "trace":
        trace = load_trace(value, pool)
        save_trace(trace, ws.trace_path)
        print(f"{geom.name}: ingested {len(trace.samples)} external samples -> {ws.trace_path}")
        return EXIT_OK
    plan = profiling_plan(geom)
    started = time.perf_counter()
    trace = profile(
        pool,
        geom,
        plan,
        value,
        seeds_per_point=3,
        master_seed=_master_seed(args),
        trace_path=ws.trace_path,
    )
    elapsed = time.perf_counter() - started
    print(
        f"{geom.name}: {len(trace.samples)} samples over {len(plan)} operating points "
        f"-> {ws.trace_path} ({elapsed:.1f}s)"
    )
    return EXIT_OK


def cmd_fit(args) -> int:
    geom = _geometry(args)
    ws = Workspace(args.workspace, geom.name)
    pool = _load_pool(ws)
    _require(ws.trace_path, "run `ramp profile` first")
    trace = load_trace(ws.trace_path, pool)
    variant = args.variant.upper()
    by_config: dict[int, list] = {}
    for s in trace.samples:
        by_config.setdefault(s.config_id, []).append(s)
    reports = {}
    excluded = []
    for config in pool:
        try:
            reports[config.id] = fit(by_config.get(config.id, []), pool.hw, variant)
        except ValueError as exc:
            excluded.append((config.id, str(exc)))
    if excluded:
        for config_id, reason in excluded:
            print(f"excluded config {config_id}: {reason}", file=sys.stderr)
    if not reports:
        raise DataError("no config had enough samples to fit")
    store = coeff_store_dict(geom.name, pool.hw.sm_count, reports)
    write_coeff_store(ws.coeffs_path, store)
    r2 = np.array([rep.r_squared for rep in reports.values()])
    n_log = sum(1 for rep in reports.values() if rep.coefficients.uses_log)
    summary = {
        "model": geom.name,
        "variant": variant,
        "fitted": len(reports),
        "excluded": len(excluded),
        "min_r_squared": float(r2.min()),
        "median_r_squared": float(np.median(r2)),
        "uses_log": n_log,
    }
    if args.json:
        print(json.dumps(summary, indent=2))
    else:
        print(
            f"{geom.name}: fitted {len(reports)} configs ({variant}) -> {ws.coeffs_path}\n"
            f"R^2 min {summary['min_r_squared']:.4f} median "
            f"{summary['median_r_squared']:.4f}; log term on {n_log} configs"
        )
    return EXIT_OK


def _read_histogram(path: Path, E: int) -> ExpertHistogram:
    _require(path, "pass a histogram CSV via --hist")
    text = path.read_text()
    first = text.splitlines()[0] if text.splitlines() else ""
    if first.startswith("seed,beta_target,beta_achieved"):
        samples = parse_histogram_csv(text, E)
        if not samples:
            raise DataError(f"{path}: no histogram rows")
        return samples[0].histogram
    fields = [f for f in first.split(",") if f.strip()]
    if len(fields) != E:
        raise DataError(f"{path}: histogram length {len(fields)} != E={E}")
    try:
        counts = tuple(int(f) for f in fields)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return ExpertHistogram(counts=counts)


def cmd_dispatch(args) -> int:
    geom = _geometry(args)
    ws = Workspace(args.workspace, geom.name)
    pool = _load_pool(ws)
    table = _load_table(ws, pool)
    hist = _read_histogram(Path(args.hist), geom.E)
    selected = select_config(table, hist, StepCache(), step_id=0)
    config = pool.by_id(selected)
    g = grid_size(config, hist, geom)
    coeff = table.coefficients[selected]
    result = {
        "model": geom.name,
        "config_id": selected,
        "bm": config.bm,
        "bn": config.bn,
        "wn": config.wn,
        "stg": config.stg,
        "ttn": config.ttn,
        "group_m": config.group_m,
        "split_k": config.split_k,
        "grid": g,
        "omega": g / pool.hw.sm_count,
        "predicted_us": predict(coeff, g, pool.hw),
    }
    if args.json:
        print(json.dumps(result, indent=2))
    else:
        print(
            f"config {selected}: bm={config.bm} ttn={config.ttn} (bn={config.bn} "
            f"wn={config.wn}) stg={config.stg} group_m={config.group_m} "
            f"split_k={config.split_k}\n"
            f"grid {g} CTAs, omega {result['omega']:.3f}, "
            f"predicted {result['predicted_us']:.2f} us"
        )
    return EXIT_OK


def _split_csv(text: str) -> tuple[str, list[str]]:
    lines = text.strip().split("\n")
    return lines[0], lines[1:]


def _evaluate_regret_mode(args, ws, pool, geom, params, master_seed) -> dict:
    table = _load_table(ws, pool)
    report = evaluate_regret(table, pool, geom, params, master_seed=master_seed)
    _write_csv(ws.reports_dir / "regret.csv", *_split_csv(report.to_csv()))
    _write_json(ws.reports_dir / "regret.json", report.aggregate())
    figures.plot_regret(report, ws.reports_dir / "regret.png")
    return report.aggregate()


def _evaluate_speedup_mode(args, ws, pool, geom, params, master_seed) -> dict:
    table = _load_table(ws, pool)
    report = speedup_ra_vs_static(table, pool, geom, params, master_seed=master_seed)
    _write_csv(ws.reports_dir / "speedup.csv", *_split_csv(report.to_csv()))
    _write_json(ws.reports_dir / "speedup.json", report.aggregate())
    figures.plot_speedup(report, ws.reports_dir / "speedup.png")
    return report.aggregate()


def _evaluate_ablation_mode(args, ws, pool, geom, params, master_seed) -> dict:
    _require(ws.trace_path, "run `ramp profile` first")
    trace = load_trace(ws.trace_path, pool)
    by_config: dict[int, list] = {}
    for s in trace.samples:
        by_config.setdefault(s.config_id, []).append(s)
    reports = {}
    for variant in ("P2", "P3", "P4"):
        coeffs = {}
        for config in pool:
            coeffs[config.id] = fit(by_config.get(config.id, []), pool.hw, variant).coefficients
        table = DispatchTable(
            model=geom.name, pool=pool, coefficients=coeffs, sm_count=pool.hw.sm_count
        )
        reports[variant] = evaluate_regret(table, pool, geom, params, master_seed=master_seed)
    rows = [
        f"{v},{r.mean:.6f},{r.se:.6f},{r.max:.6f},{len(r.records)}"
        for v, r in reports.items()
    ]
    _write_csv(ws.reports_dir / "ablation.csv", "variant,mean_regret,se,max_regret,n", rows)
    aggregate = {v: r.aggregate() for v, r in reports.items()}
    _write_json(ws.reports_dir / "ablation.json", aggregate)
    figures.plot_ablation(reports, ws.reports_dir / "ablation.png")
    return aggregate


def _evaluate_curves_mode(args, ws, pool, geom, params, master_seed) -> dict:
    sm = pool.hw.sm_count
    ref_id = static_best(pool, geom, params, [64])
    ref = pool.by_id(ref_id)

    beta_grid = (0.2, 0.35, 0.5, 0.65, 0.8, 0.9, 1.0)
    betas = [b for _, b in profiling_plan(geom, batch_sizes=(64,), betas=beta_grid)]
    omega_rows = figures.omega_beta_rows(geom, ref, 64, betas, 8, sm, master_seed)
    _write_csv(
        ws.reports_dir / "curves_omega_beta.csv",
        "beta,mean_omega,std_omega",
        [f"{b:.6g},{m:.6f},{s:.6f}" for b, m, s in omega_rows],
    )
    figures.plot_omega_beta(omega_rows, 64, ws.reports_dir / "curves_omega_beta.png")

    cols = pool.columns()
    pool_bms = sorted(set(cols["bm"].tolist()))
    picks = sorted({min(pool_bms, key=lambda v: abs(v - want)) for want in (16, 64, 104)})
    stair_rows = []
    stair_by_label = {}
    for bm in picks:
        candidates = [
            c for c in pool if c.bm == bm and c.ttn == 256 and c.split_k == 1
            and c.group_m == pool.regime.group_m_required
        ]
        if not candidates:
            continue
        config = candidates[0]
        rows = figures.staircase_rows(config, geom, params)
        stair_by_label[f"bm={bm} (id {config.id})"] = rows
        stair_rows += [f"{config.id},{bm},{g},{t:.6f}" for g, t in rows]
    _write_csv(
        ws.reports_dir / "curves_staircase.csv", "config_id,bm,grid,time_us", stair_rows
    )
    figures.plot_staircase(stair_by_label, sm, ws.reports_dir / "curves_staircase.png")

    cross_bms = sorted({min(pool_bms, key=lambda v: abs(v - want)) for want in (8, 32, 64, 104)})
    cross_rows = figures.crossover_rows(
        pool, geom, params, cross_bms, [8, 16, 32, 64, 128, 256, 512, 1024]
    )
    _write_csv(
        ws.reports_dir / "curves_crossover.csv",
        "S,bm,time_us",
        [f"{S},{bm},{t:.6f}" for S, bm, t in cross_rows],
    )
    figures.plot_crossover(cross_rows, ws.reports_dir / "curves_crossover.png")
    return {
        "omega_beta_points": len(omega_rows),
        "staircase_configs": len(stair_by_label),
        "crossover_points": len(cross_rows),
    }


def cmd_evaluate(args) -> int:
    geom = _geometry(args)
    ws = Workspace(args.workspace, geom.name)
    pool = _load_pool(ws)
    params = _sim_params(args)
    master_seed = _master_seed(args)
    ws.reports_dir.mkdir(parents=True, exist_ok=True)
    runner = {
        "regret": _evaluate_regret_mode,
        "speedup": _evaluate_speedup_mode,
        "ablation": _evaluate_ablation_mode,
        "curves": _evaluate_curves_mode,
    }[args.mode]
    summary = runner(args, ws, pool, geom, params, master_seed)
    if args.json:
        print(json.dumps({"model": geom.name, "mode": args.mode, "result": summary}, indent=2))
    else:
        print(f"{geom.name}: {args.mode} reports -> {ws.reports_dir}")
        print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_classify(args) -> int:
    catalog = load_catalog()
    rows = []
    for geom in catalog:
        vars = region_variables(geom)
        regime = classify_regime(vars)
        rows.append(
            {
                "model": geom.name,
                "rho": _fmt_rational(vars.rho),
                "lam": vars.lam,
                "kappa": _fmt_rational(vars.kappa),
                "regime": regime.regime,
                "modes": regime.predicted_modes,
            }
        )
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        print(f"{'model':<14}{'rho':>8}{'lam':>6}{'kappa':>8}  {'regime':<8}modes")
        for r in rows:
            print(
                f"{r['model']:<14}{r['rho']:>8}{r['lam']:>6}{r['kappa']:>8}  "
                f"{r['regime']:<8}{r['modes']}"
            )
    if args.check:
        mismatches = []
        for r in rows:
            expected = EXPECTED_CLASSIFICATION.get(r["model"])
            if expected is None:
                mismatches.append(f"{r['model']}: not in the expected table")
                continue
            got = (r["rho"], r["lam"], r["kappa"], r["regime"], r["modes"])
            want = (str(expected[0]), expected[1], str(expected[2]), expected[3], expected[4])
            if got != want:
                mismatches.append(f"{r['model']}: got {got}, expected {want}")
        if mismatches:
            raise CheckFailure("classification mismatch:\n" + "\n".join(mismatches))
        print(f"check: {len(rows)}/{len(EXPECTED_CLASSIFICATION)} rows match")
    return EXIT_OK


def cmd_sample_routing(args) -> int:
    geom = _geometry(args)
    if args.S <= 0:
        raise DataError(f"--S must be >= 1, got {args.S}")
    if args.seeds <= 0:
        raise DataError(f"--seeds must be >= 1, got {args.seeds}")
    master_seed = _master_seed(args)
    lines = [histogram_csv_header(geom.E)]
    for rep in range(args.seeds):
        seed = derive_seed(master_seed, _SAMPLE_DOMAIN, args.S, round(args.beta * 1000), rep)
        sample = sample_histogram(geom.E, args.S, geom.top_k, args.beta, seed)
        lines.append(sample_to_csv_row(sample))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"{args.seeds} histograms -> {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------- main


def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="catalog model name (case-insensitive)")
    common.add_argument("--workspace", default="workspace", help="artifact directory root")
    common.add_argument("--hw", help="JSON file of hardware model overrides")
    common.add_argument(
        "--oracle",
        default="sim",
        help="sim | sim:<params.json> | trace:<csv> (default: sim)",
    )
    common.add_argument("--variant", default="p4", choices=["p2", "p3", "p4"])
    common.add_argument("--seed", type=int, help="master seed (default: $RAMP_MASTER_SEED or 42)")
    common.add_argument("--json", action="store_true", help="machine-readable output")

    parser = _Parser(prog="ramp", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enumerate", parents=[common], help="write the valid config pool")
    p.set_defaults(func=cmd_enumerate, needs_model=True, needs_lock=True)

    p = sub.add_parser("profile", parents=[common], help="time every config on the plan grid")
    p.set_defaults(func=cmd_profile, needs_model=True, needs_lock=True)

    p = sub.add_parser("fit", parents=[common], help="fit cost-model coefficients")
    p.set_defaults(func=cmd_fit, needs_model=True, needs_lock=True)

    p = sub.add_parser("dispatch", parents=[common], help="select a config for one histogram")
    p.add_argument("--hist", required=True, help="histogram CSV (counts line or sampler output)")
    p.set_defaults(func=cmd_dispatch, needs_model=True, needs_lock=True)

    p = sub.add_parser("evaluate", parents=[common], help="regret/speedup/ablation/curves reports")
    p.add_argument(
        "--mode",
        default="regret",
        choices=["regret", "speedup", "ablation", "curves"],
    )
    p.set_defaults(func=cmd_evaluate, needs_model=True, needs_lock=True)

    p = sub.add_parser("classify", parents=[common], help="print the regime table")
    p.add_argument("--check", action="store_true", help="verify against the published table")
    p.set_defaults(func=cmd_classify, needs_model=False, needs_lock=False)

    p = sub.add_parser("sample-routing", parents=[common], help="draw routing histograms")
    p.add_argument("--S", type=int, required=True, help="batch size (sequences)")
    p.add_argument("--beta", type=float, required=True, help="balancedness target in [0, 1]")
    p.add_argument("--seeds", type=int, default=1, help="number of histograms (default 1)")
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_sample_routing, needs_model=True, needs_lock=False)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.needs_model and not args.model:
        parser.error(f"{args.command} requires --model")
    try:
        if args.needs_lock:
            with _workspace_lock(args.workspace):
                return args.func(args)
        return args.func(args)
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
