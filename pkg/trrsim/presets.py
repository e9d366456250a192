"""Preset catalog access.

The catalog ships as ``trrsim/catalog.toml``. A preset plus a scale profile
yields a validated :class:`DeviceConfig`; a user config file may name a preset
and override any nested section.
"""
from __future__ import annotations

import logging
import math
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import attrs

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from trrsim.config import (
    DeviceConfig,
    DisturbanceModelConfig,
    RegularRefreshConfig,
    RowMappingConfig,
    TrrMechanismConfig,
    merge_overrides,
    trr_config_from_mapping,
)
from trrsim.errors import ConfigParseError, InvalidConfigError

logger = logging.getLogger(__name__)

CATALOG_FILE = "catalog.toml"


@attrs.frozen
class ScaleProfile:
    """Iteration counts and geometry for one scale (desk or paper)."""

    name: str
    rows_per_bank: int
    spare_rows: int
    row_bits: int
    regular_period: int
    consistency_checks: int
    revalidations: int
    reset_periods: int
    scout_rows: int
    capacity_max: int
    eviction_trials: int
    persistence_refs: int
    guarantee_trials: int
    window_trials: int
    kind_trials: int
    sweep_victims: int
    attack_periods: int
    # rows between vulnerability-scan victims; 1 scans every row of the bank
    scan_stride: int


@lru_cache(maxsize=1)
def load_catalog() -> Dict[str, Any]:
    try:
        raw = resources.files("trrsim").joinpath(CATALOG_FILE).read_bytes()
        return tomllib.loads(raw.decode("utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigParseError(CATALOG_FILE, str(e)) from e


def list_presets() -> List[str]:
    return list(load_catalog()["presets"])


def load_profile(name: str) -> ScaleProfile:
    profiles = load_catalog()["profiles"]
    if name not in profiles:
        raise ConfigParseError(CATALOG_FILE, f"unknown profile '{name}' (expected one of {sorted(profiles)})")
    return ScaleProfile(name=name, **profiles[name])


def variant_label(preset: str) -> str:
    presets = load_catalog()["presets"]
    if preset not in presets:
        raise ConfigParseError(CATALOG_FILE, f"unknown preset '{preset}'")
    return presets[preset]["trr"]


def best_params(label: str) -> Dict[str, Any]:
    """Attack family and parameters tuned for a TRR variant label (e.g. "A_TRR1")."""
    table = load_catalog()["best_params"]
    if label not in table:
        raise ConfigParseError(CATALOG_FILE, f"no attack parameters for '{label}'")
    return dict(table[label])


def build_config(
    preset: str,
    profile: str = "desk",
    seed: int = 0,
    overrides: Optional[Mapping[str, Any]] = None,
) -> DeviceConfig:
    catalog = load_catalog()
    scale = load_profile(profile)
    label = variant_label(preset)
    entry = catalog["presets"][preset]

    if label == "none":
        variant: Dict[str, Any] = {}
        trr = TrrMechanismConfig()
    else:
        variant = dict(catalog["variants"][label])
        trr_fields = {
            key: variant[key]
            for key in ("variant", "trr_ref_period", "neighbor_span", "counter", "sampling", "window")
            if key in variant
        }
        trr = trr_config_from_mapping({**trr_fields, "label": label})

    period = variant.get("regular_period", scale.regular_period)
    physical_rows = scale.rows_per_bank + scale.spare_rows
    rows_per_ref = math.ceil(physical_rows / period)

    config = DeviceConfig(
        banks=entry["banks"],
        rows_per_bank=scale.rows_per_bank,
        row_bits=scale.row_bits,
        disturbance=DisturbanceModelConfig(
            hc_first=entry["hc_first"],
            per_cell_threshold_spread=variant.get("threshold_spread", 4.0),
            paired_rows=variant.get("paired_rows", False),
        ),
        mapping=RowMappingConfig(spare_rows=scale.spare_rows),
        regular_refresh=RegularRefreshConfig(
            rows_per_ref=rows_per_ref,
            full_pass_period_refs=period,
            refresh_slots=period * rows_per_ref,
        ),
        trr=trr,
        seed=seed,
        name=preset,
        pins=entry["pins"],
    )
    if overrides:
        config = merge_overrides(config, overrides)
    return config.validate()


def load_config_file(path: Path, profile: str = "desk", seed: Optional[int] = None) -> DeviceConfig:
    """Build a config from a user TOML file naming a ``preset`` plus overrides."""
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigParseError(str(path), str(e)) from e

    preset = data.pop("preset", "none")
    profile = data.pop("profile", profile)
    file_seed = data.pop("seed", 0)
    try:
        config = build_config(preset, profile, seed if seed is not None else file_seed, data)
    except InvalidConfigError as e:
        raise ConfigParseError(str(path), str(e)) from e
    logger.info(f"Loaded config {path} (preset {preset}, profile {profile})")
    return config
