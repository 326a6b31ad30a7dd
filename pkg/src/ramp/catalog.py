"""MoE architecture geometry, performance-region variables, and regime classification.

A fused MoE kernel's behavior is governed by three dimensionless quantities
derived from the layer shape alone, all computed against a fixed reference
tile (256 elements wide, 128 deep, 32 KB at one byte per element):

* ``rho``   -- compute density: weight tiles streamed per CTA.  Below the
  crossover ``RHO_C_EMPIRICAL`` the kernel is pipeline-dominated (regime A);
  above it, compute-dominated (regime B).
* ``lam``   -- N-tile count: how many column stripes cover one expert.
* ``kappa`` -- K-reduction depth in tiles: deep reductions (kappa >= 48)
  make split-K worthwhile at low occupancy.

``lam * kappa`` counts reference tiles in one expert's weight matrix, so
``lam * kappa * 32 KB`` is its byte footprint; when that exceeds the
effective L2 capacity (45 MB, i.e. lam * kappa > 1440) the grid must be
swizzled (GROUP_M) to avoid L2 thrashing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

TTN_REF = 256
TILE_K_REF = 128
REF_TILE_BYTES = TTN_REF * TILE_K_REF  # 32 KB at elem_size 1

RHO_C_EMPIRICAL = 200
RHO_C_ANALYTIC = 186
GROUP_M_THRESHOLD = 1440  # 45 MB / 32 KB
SPLIT_K_MIN_KAPPA = 48


def analytic_crossover(startup_us: float = 24.0, wgmma_ns_per_tile: float = 130.0) -> float:
    """Startup-vs-compute crossover density: startup time over per-tile time.

    24 us / 130 ns = 184.6; the published constant ``RHO_C_ANALYTIC`` rounds
    this to 186.  Classification uses ``RHO_C_EMPIRICAL`` instead.
    """
    return startup_us * 1000.0 / wgmma_ns_per_tile


@dataclass(frozen=True)
class MoeGeometry:
    """Shape of one MoE layer: expert count and per-expert GEMM dimensions."""

    name: str
    E: int
    N: int
    K: int
    top_k: int

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("geometry name must be non-empty")
        for field in ("E", "N", "K", "top_k"):
            value = getattr(self, field)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValueError(f"{self.name}: {field} must be an integer, got {value!r}")
        if self.E < 1:
            raise ValueError(f"{self.name}: E must be >= 1, got {self.E}")
        if self.N < 1 or self.K < 1:
            raise ValueError(f"{self.name}: N and K must be >= 1, got N={self.N} K={self.K}")
        if not 1 <= self.top_k <= self.E:
            raise ValueError(f"{self.name}: top_k must be in [1, E={self.E}], got {self.top_k}")

    @property
    def reference_aligned(self) -> bool:
        """True when N and K are multiples of the reference tile dimensions."""
        return self.N % TTN_REF == 0 and self.K % TILE_K_REF == 0


@dataclass(frozen=True)
class RegionVariables:
    """The (rho, lam, kappa) triple under the fixed reference tile.

    rho and kappa are kept as exact rationals so geometries whose N or K is
    not a reference-tile multiple classify without rounding error; ``aligned``
    flags that case rather than silently truncating.
    """

    rho: Fraction
    lam: int
    kappa: Fraction
    aligned: bool

    @property
    def weight_tiles(self) -> Fraction:
        return self.lam * self.kappa

    @property
    def weight_bytes(self) -> Fraction:
        return self.weight_tiles * REF_TILE_BYTES


@dataclass(frozen=True)
class RegimeReport:
    """Static optimization-mode prediction for one geometry."""

    regime: str  # "A" (pipeline-dominated) or "B" (compute-dominated)
    group_m_required: bool
    split_k_eligible: bool
    ttn512_preferred_when_multiwave: bool

    @property
    def predicted_modes(self) -> str:
        # GROUP_M takes display precedence: a thrashing geometry is fixed by
        # the swizzle first, whatever its kappa says about split-K.
        if self.group_m_required:
            return "Tile + GROUP_M"
        if self.split_k_eligible:
            return "Tile + split-K"
        return "Tile only"


def region_variables(geom: MoeGeometry) -> RegionVariables:
    """Compute (rho, lam, kappa) for a geometry under the reference tile."""
    rho = Fraction(geom.N * geom.K, REF_TILE_BYTES)
    lam = -(-geom.N // TTN_REF)  # ceil division
    kappa = Fraction(geom.K, TILE_K_REF)
    return RegionVariables(rho=rho, lam=lam, kappa=kappa, aligned=geom.reference_aligned)


def classify_regime(vars: RegionVariables, rho_c: float = RHO_C_EMPIRICAL) -> RegimeReport:
    """Classify a geometry into regime A/B and flag its optimization modes."""
    return RegimeReport(
        regime="B" if vars.rho >= rho_c else "A",
        group_m_required=vars.weight_tiles > GROUP_M_THRESHOLD,
        split_k_eligible=vars.kappa >= SPLIT_K_MIN_KAPPA,
        # A 512-wide tile halves the grid without padding only when N divides
        # evenly; for aligned geometries that is "lam even".
        ttn512_preferred_when_multiwave=vars.aligned and vars.lam % 2 == 0,
    )


def load_catalog(descriptor_file: str | Path | None = None) -> list[MoeGeometry]:
    """Load model descriptors from a JSON array; defaults to the bundled catalog."""
    if descriptor_file is None:
        text = resources.files("ramp.data").joinpath("models.json").read_text()
        source = "bundled catalog"
    else:
        path = Path(descriptor_file)
        text = path.read_text()
        source = str(path)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{source}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, list):
        raise ValueError(f"{source}: expected a JSON array of model objects")
    models = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise ValueError(f"{source}: entry {i} is not an object")
        missing = {"name", "E", "N", "K", "top_k"} - set(entry)
        if missing:
            raise ValueError(f"{source}: entry {i} missing fields {sorted(missing)}")
        try:
            models.append(
                MoeGeometry(
                    name=entry["name"],
                    E=entry["E"],
                    N=entry["N"],
                    K=entry["K"],
                    top_k=entry["top_k"],
                )
            )
        except ValueError as exc:
            raise ValueError(f"{source}: entry {i}: {exc}") from exc
    return models


def find_model(name: str, catalog: list[MoeGeometry] | None = None) -> MoeGeometry:
    """Case-insensitive catalog lookup; raises KeyError naming the alternatives."""
    models = catalog if catalog is not None else load_catalog()
    wanted = name.strip().lower()
    for geom in models:
        if geom.name.lower() == wanted:
            return geom
    known = ", ".join(g.name for g in models)
    raise KeyError(f"unknown model {name!r}; available: {known}")


# Expected classification of the bundled catalog, kept next to the code that
# reproduces it so `classify --check` can diff against a frozen reference.
EXPECTED_CLASSIFICATION: dict[str, tuple[int, int, int, str, str]] = {
    "OLMoE": (128, 8, 16, "A", "Tile only"),
    "Qwen3": (96, 6, 16, "A", "Tile only"),
    "DSv3-EP8": (112, 2, 56, "A", "Tile + split-K"),
    "Mixtral": (6144, 128, 48, "B", "Tile + GROUP_M"),
    "DSv3-TP8": (112, 2, 56, "A", "Tile + split-K"),
    "Phi-3.5-MoE": (1600, 50, 32, "B", "Tile + GROUP_M"),
    "Jamba-1.5": (2048, 64, 32, "B", "Tile + GROUP_M"),
    "DBRX": (4032, 84, 48, "B", "Tile + GROUP_M"),
}
