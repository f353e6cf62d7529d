"""Configuration loading.

Config files are JSON.  Durations are picosecond integers or decimal strings
(see units.py); rates and efficiencies may be integers, decimal strings or
fraction strings like "128/130" so that link arithmetic stays exact.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional

from .dram import DramTimings, FlipModelConfig, Geometry
from .link import LinkConfig
from .memctrl import McConfig
from .trr import TrrConfig, TrrPolicy
from .units import parse_duration


class ConfigError(ValueError):
    pass


def _frac(value) -> Fraction:
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


def _take(d: dict, parsers: dict, what: str) -> dict:
    out = {}
    for key, value in d.items():
        if key not in parsers:
            raise ConfigError(f"unknown {what} field {key!r}")
        out[key] = parsers[key](value)
    return out


def link_config(d: dict) -> LinkConfig:
    if isinstance(d, str):
        try:
            return LINK_PROFILES[d]
        except KeyError:
            raise ConfigError(f"unknown link profile {d!r}") from None
    parsers = {
        "lane_rate_gbps": _frac, "lanes": int, "encoding_efficiency": _frac,
        "framing_overhead_bytes": _frac, "tx_granularity": parse_duration,
        "latency": parse_duration, "tunnel_efficiency": _frac,
        "tx_fifo_depth": int,
    }
    return LinkConfig(**_take(d, parsers, "link"))


def mc_config(d: dict) -> McConfig:
    parsers = {
        "rpq_depth": int, "wpq_depth": int, "window": int,
        "starvation_age_cap": parse_duration,
        "write_major_watermark": float, "underfill_reads": bool,
    }
    return McConfig(**_take(d, parsers, "controller"))


def geometry_config(d: dict) -> Geometry:
    parsers = {k: int for k in ("channels", "ranks", "bank_groups",
                                "banks_per_group", "rows_per_bank", "columns")}
    return Geometry(**_take(d, parsers, "geometry"))


def timings_config(d: dict) -> DramTimings:
    parsers = {k: parse_duration for k in
               ("trc", "tras", "trp", "trcd", "tccd", "trefi",
                "refresh_window")}
    return DramTimings(**_take(d, parsers, "timings"))


def flip_config(d: dict) -> FlipModelConfig:
    parsers = {
        "mask_seed": int, "flip_threshold": int, "flippy_denominator": int,
        "bits_per_row": int, "threshold_spread": int, "sum_sides": bool,
        "blast_radius": int,
    }
    return FlipModelConfig(**_take(d, parsers, "flip"))


def trr_config(d: dict) -> TrrConfig:
    parsers = {
        "sampler_slots": int, "policy": lambda v: TrrPolicy(v),
        "neighbors_refreshed": int, "enabled": bool, "flag_threshold": int,
        "sample_hits": bool, "seed": int,
    }
    return TrrConfig(**_take(d, parsers, "trr"))


@dataclass
class DimmProfile:
    """Geometry, timings, flip-model ground truth and the TRR config."""

    geometry: Geometry = field(default_factory=Geometry)
    timings: DramTimings = field(default_factory=DramTimings)
    flip: FlipModelConfig = field(default_factory=FlipModelConfig)
    trr: TrrConfig = field(default_factory=TrrConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "DimmProfile":
        known = {"geometry", "timings", "flip", "trr"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown DIMM profile fields {sorted(extra)}")
        return cls(
            geometry=geometry_config(d.get("geometry", {})),
            timings=timings_config(d.get("timings", {})),
            flip=flip_config(d.get("flip", {})),
            trr=trr_config(d.get("trr", {})),
        )

    @classmethod
    def load(cls, path: str) -> "DimmProfile":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ExperimentConfig:
    link: LinkConfig = field(default_factory=LinkConfig)
    controller: McConfig = field(default_factory=McConfig)
    dimm: DimmProfile = field(default_factory=DimmProfile)
    seed: int = 0
    output_dir: str = "."

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "ExperimentConfig":
        known = {"link", "controller", "dimm", "dimm_profile", "seed",
                 "output_dir"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        if "seed" not in d:
            raise ConfigError("config must set an explicit seed")
        if "dimm_profile" in d:
            path = d["dimm_profile"]
            if not os.path.isabs(path):
                path = os.path.join(base_dir, path)
            if not os.path.exists(path):
                raise ConfigError(f"DIMM profile not found: {path}")
            dimm = DimmProfile.load(path)
        else:
            dimm = DimmProfile.from_dict(d.get("dimm", {}))
        return cls(
            link=link_config(d.get("link", {})),
            controller=mc_config(d.get("controller", {})),
            dimm=dimm,
            seed=int(d["seed"]),
            output_dir=d.get("output_dir", "."),
        )

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            d = json.load(fh)
        return cls.from_dict(d, base_dir=os.path.dirname(os.path.abspath(path)))


# Link profiles.  The direct profile's framing overhead is calibrated so a
# minimal 64-bit-address read serializes in 16.2 ns on Gen2 x4 lanes.  The
# tunnelled profile runs Gen3 x4 lanes with the tunnel efficiency tuned so
# that replayed attack patterns keep roughly 80% of their effect.
LINK_PROFILES = {
    "pcie_gen2_x4": LinkConfig(),
    "thunderbolt3": LinkConfig(
        lane_rate_gbps=Fraction(8),
        lanes=4,
        encoding_efficiency=Fraction(128, 130),
        tunnel_efficiency=Fraction(11, 40),
    ),
}
