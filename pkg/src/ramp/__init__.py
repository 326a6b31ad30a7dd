"""Routing-aware dispatch for mixture-of-experts grouped-GEMM kernels.

The pipeline: classify a model's geometry into a performance regime,
enumerate the valid tile-config pool, profile each config across routing
operating points, fit a four-coefficient wave cost model per config, then
select configs at runtime from the live expert histogram and measure the
selection's regret against exhaustive search.
"""

from .catalog import (
    EXPECTED_CLASSIFICATION,
    MoeGeometry,
    RegimeReport,
    RegionVariables,
    classify_regime,
    find_model,
    load_catalog,
    region_variables,
)
from .config_space import (
    ConfigPool,
    EmptyPoolError,
    HardwareModel,
    TileConfig,
    enumerate_configs,
    smem_usage,
)
from .cost_model import (
    CostCoefficients,
    FitReport,
    ProfilingSample,
    fit,
    predict,
    profiling_plan,
)
from .dispatch import (
    DispatchTable,
    RegretReport,
    SpeedupReport,
    StepCache,
    evaluate_regret,
    select_config,
    speedup_ra_vs_static,
    split_k_gate,
    static_best,
)
from .oracle import (
    OracleParams,
    TimingTrace,
    load_trace,
    profile,
    save_trace,
    simulate_time,
    time_at_grid,
)
from .routing import (
    BetaUnreachableError,
    ExpertHistogram,
    RoutingSample,
    balancedness,
    grid_size,
    round_robin,
    sample_histogram,
    wave_utilization,
)

__version__ = "0.1.0"

__all__ = [
    "EXPECTED_CLASSIFICATION",
    "MoeGeometry",
    "RegimeReport",
    "RegionVariables",
    "classify_regime",
    "find_model",
    "load_catalog",
    "region_variables",
    "ConfigPool",
    "EmptyPoolError",
    "HardwareModel",
    "TileConfig",
    "enumerate_configs",
    "smem_usage",
    "CostCoefficients",
    "FitReport",
    "ProfilingSample",
    "fit",
    "predict",
    "profiling_plan",
    "DispatchTable",
    "RegretReport",
    "SpeedupReport",
    "StepCache",
    "evaluate_regret",
    "select_config",
    "speedup_ra_vs_static",
    "split_k_gate",
    "static_best",
    "OracleParams",
    "TimingTrace",
    "load_trace",
    "profile",
    "save_trace",
    "simulate_time",
    "time_at_grid",
    "BetaUnreachableError",
    "ExpertHistogram",
    "RoutingSample",
    "balancedness",
    "grid_size",
    "round_robin",
    "sample_histogram",
    "wave_utilization",
    "__version__",
]
