"""Kernel tile configurations, hardware constraints, and pool enumeration.

A tile configuration fixes how one CTA covers the expert GEMM: ``bm`` tokens
per block, an output stripe ``ttn = bn * wn`` elements wide drained by ``wn``
consumer warps, ``stg`` pipeline stages, plus two grid-level toggles
(``group_m`` swizzle, ``split_k`` reduction split).  The pool is the set of
all configurations that fit the hardware; dispatch picks from it at runtime.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .catalog import (
    SPLIT_K_MIN_KAPPA,
    TILE_K_REF,
    MoeGeometry,
    RegimeReport,
    region_variables,
)

# The two (bn, wn) factorizations offered per total tile width.
FACTORIZATIONS: dict[int, tuple[tuple[int, int], ...]] = {
    256: ((64, 4), (128, 2)),
    512: ((128, 4), (256, 2)),
}

BM_VALUES = tuple(range(2, 105, 2))  # even, WGMMA M-alignment
STAGE_VALUES = (1, 2, 3, 4, 5)
SPLIT_K_FACTOR = 4

_MB = 1 << 20


class EmptyPoolError(ValueError):
    """No configuration satisfies the hardware constraints."""


@dataclass(frozen=True)
class HardwareModel:
    """GPU resource model; defaults describe an H200-class part."""

    sm_count: int = 132
    smem_capacity: int = 227 * 1024  # bytes
    l2_effective: int = 45 * _MB  # bytes
    elem_size: int = 1  # FP8
    rho_c_empirical: float = 200.0
    rho_c_analytic: float = 186.0
    startup_us: float = 24.0
    wgmma_ns_per_tile: float = 130.0
    splitk_launch_overhead_us: float = 12.5

    def __post_init__(self) -> None:
        for name in (
            "sm_count",
            "smem_capacity",
            "l2_effective",
            "elem_size",
            "rho_c_empirical",
            "rho_c_analytic",
            "startup_us",
            "wgmma_ns_per_tile",
            "splitk_launch_overhead_us",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"hardware field {name} must be strictly positive")
        if self.l2_effective > 60 * _MB:
            raise ValueError("l2_effective exceeds the 60 MB physical cap")

    @classmethod
    def from_overrides(cls, overrides: dict) -> "HardwareModel":
        unknown = set(overrides) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown hardware fields: {sorted(unknown)}")
        return cls(**overrides)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass(frozen=True)
class TileConfig:
    """One kernel configuration; the unit of dispatch."""

    id: int
    bm: int
    bn: int
    wn: int
    stg: int
    ttn: int
    group_m: bool = False
    split_k: int = 1

    def __post_init__(self) -> None:
        if self.ttn != self.bn * self.wn:
            raise ValueError(f"ttn={self.ttn} must equal bn*wn={self.bn * self.wn}")
        if self.ttn not in FACTORIZATIONS:
            raise ValueError(f"ttn must be one of {sorted(FACTORIZATIONS)}, got {self.ttn}")
        if not 1 <= self.stg <= 5:
            raise ValueError(f"stg must be in [1, 5], got {self.stg}")
        if not 2 <= self.bm <= 104 or self.bm % 2 != 0:
            raise ValueError(f"bm must be even in [2, 104], got {self.bm}")
        if self.split_k not in (1, SPLIT_K_FACTOR):
            raise ValueError(f"split_k must be 1 or {SPLIT_K_FACTOR}, got {self.split_k}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "bm": self.bm,
            "bn": self.bn,
            "wn": self.wn,
            "stg": self.stg,
            "ttn": self.ttn,
            "group_m": self.group_m,
            "split_k": self.split_k,
        }


def smem_usage(config: TileConfig, hw: HardwareModel) -> int:
    """Pipeline buffer estimate: stg stages of (activations + weights) tiles."""
    return config.stg * (config.bm + config.ttn) * TILE_K_REF * hw.elem_size


def n_tiles(config: TileConfig, geom: MoeGeometry) -> int:
    """Output column stripes per expert: ceil(N / ttn)."""
    return -(-geom.N // config.ttn)


def is_valid(config: TileConfig, hw: HardwareModel, geom: MoeGeometry) -> bool:
    """Hardware admissibility of a configuration for one geometry."""
    if smem_usage(config, hw) > hw.smem_capacity:
        return False
    if config.split_k != 1 and region_variables(geom).kappa < SPLIT_K_MIN_KAPPA:
        return False
    return True


@dataclass
class ConfigPool:
    """Immutable-after-enumeration set of valid configs with dense ids."""

    geom: MoeGeometry
    hw: HardwareModel
    regime: RegimeReport
    configs: tuple[TileConfig, ...]
    _columns: dict | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.configs)

    def __iter__(self):
        return iter(self.configs)

    def by_id(self, config_id: int) -> TileConfig:
        config = self.configs[config_id]
        if config.id != config_id:
            raise ValueError(f"pool ids not dense at {config_id}")
        return config

    def columns(self) -> dict:
        """Per-field numpy columns over the pool, in id order (cached)."""
        if self._columns is None:
            self._columns = {
                "bm": np.array([c.bm for c in self.configs], dtype=np.int64),
                "ttn": np.array([c.ttn for c in self.configs], dtype=np.int64),
                "stg": np.array([c.stg for c in self.configs], dtype=np.int64),
                "group_m": np.array([c.group_m for c in self.configs], dtype=bool),
                "split_k": np.array([c.split_k for c in self.configs], dtype=np.int64),
            }
        return self._columns

    def to_dicts(self) -> list[dict]:
        return [c.to_dict() for c in self.configs]

    @classmethod
    def from_dicts(
        cls,
        geom: MoeGeometry,
        hw: HardwareModel,
        regime: RegimeReport,
        dicts: list[dict],
    ) -> "ConfigPool":
        configs = tuple(TileConfig(**d) for d in dicts)
        for i, c in enumerate(configs):
            if c.id != i:
                raise ValueError(f"pool ids must be dense and ordered; id {c.id} at index {i}")
            if not is_valid(c, hw, geom):
                raise ValueError(f"config id {c.id} violates hardware constraints")
        return cls(geom=geom, hw=hw, regime=regime, configs=configs)


def enumerate_configs(geom: MoeGeometry, hw: HardwareModel, regime: RegimeReport) -> ConfigPool:
    """Enumerate the valid pool for one geometry.

    The Cartesian base (bm x ttn-factorization x stg) is filtered by
    ``is_valid``; regime-B geometries double the pool with group_m variants,
    and deep-reduction geometries append split_k=4 copies.  Ordering is fixed
    by (bm, ttn, stg, group_m, split_k, bn) so ids are stable across runs.
    """
    base = []
    for bm, ttn, stg in product(BM_VALUES, sorted(FACTORIZATIONS), STAGE_VALUES):
        for bn, wn in FACTORIZATIONS[ttn]:
            candidate = TileConfig(id=0, bm=bm, bn=bn, wn=wn, stg=stg, ttn=ttn)
            if is_valid(candidate, hw, geom):
                base.append(candidate)

    expanded = list(base)
    if regime.group_m_required:
        expanded += [
            TileConfig(id=0, bm=c.bm, bn=c.bn, wn=c.wn, stg=c.stg, ttn=c.ttn, group_m=True)
            for c in base
        ]
    if regime.split_k_eligible:
        split_variants = [
            TileConfig(
                id=0,
                bm=c.bm,
                bn=c.bn,
                wn=c.wn,
                stg=c.stg,
                ttn=c.ttn,
                group_m=c.group_m,
                split_k=SPLIT_K_FACTOR,
            )
            for c in expanded
        ]
        expanded += [c for c in split_variants if is_valid(c, hw, geom)]

    if not expanded:
        raise EmptyPoolError(
            f"{geom.name}: no valid configuration under smem capacity "
            f"{hw.smem_capacity} bytes; hardware model looks misconfigured"
        )

    expanded.sort(key=lambda c: (c.bm, c.ttn, c.stg, c.group_m, c.split_k, c.bn))
    configs = tuple(
        TileConfig(
            id=i,
            bm=c.bm,
            bn=c.bn,
            wn=c.wn,
            stg=c.stg,
            ttn=c.ttn,
            group_m=c.group_m,
            split_k=c.split_k,
        )
        for i, c in enumerate(expanded)
    )
    return ConfigPool(geom=geom, hw=hw, regime=regime, configs=configs)
