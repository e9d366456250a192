"""Device and TRR configuration types.

All configs are frozen attrs classes. ``DeviceConfig.validate`` checks every
invariant and raises :class:`InvalidConfigError` naming the offending field.
Times are integer nanoseconds except retention values, which are kept in
milliseconds because that is the granularity they are drawn at.
"""
from __future__ import annotations

import math
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import attrs

from trrsim.errors import InvalidConfigError

NS_PER_MS = 1_000_000

VARIANTS = ("counter", "sampling", "window", "none")
MAPPING_SCHEMES = ("identity", "xor_scramble", "block_reverse")
EVICT_POLICIES = ("min_counter", "fifo")
EARLY_BIAS_POLICIES = ("rank", "linear", "uniform")

Span = Union[Tuple[int, ...], str]


def _pair(value) -> Tuple[int, int]:
    lo, hi = value
    return (int(lo), int(hi))


@attrs.frozen
class TimingParams:
    t_act_to_pre: int = 35
    t_pre_to_act: int = 15
    t_ref: int = 350
    t_faw_window: int = 30
    max_acts_in_window: int = 4
    ref_interval: int = 7800

    @property
    def act_cycle(self) -> int:
        return self.t_act_to_pre + self.t_pre_to_act

    @property
    def hammers_per_interval(self) -> int:
        """ACT/PRE cycles that fit between two REFs on one bank."""
        return (self.ref_interval - self.t_ref) // self.act_cycle


@attrs.frozen
class RetentionModelConfig:
    base_retention_ms: int = 10_000
    weak_row_fraction: float = 0.9
    weak_retention_min_ms: int = 300
    weak_retention_max_ms: int = 350
    weak_cells_per_weak_row: Tuple[int, int] = attrs.field(default=(1, 2), converter=_pair)
    vrt_row_fraction: float = 0.02
    vrt_toggle_period_ms: int = 2_000
    retention_quantum_ms: int = 50


@attrs.frozen
class DisturbanceModelConfig:
    hc_first: int = 16_000
    per_cell_threshold_spread: float = 4.0
    distance2_factor: float = 512.0
    single_sided_factor: float = 4.0
    paired_rows: bool = False
    vulnerable_cells_per_row: Tuple[int, int] = attrs.field(default=(1, 4), converter=_pair)


@attrs.frozen
class RowMappingConfig:
    scheme: str = "identity"
    xor_mask: int = 0
    block_size: int = 0
    spare_rows: int = 16
    # (logical row, spare physical row)
    remapped_rows: Tuple[Tuple[int, int], ...] = attrs.field(
        default=(), converter=lambda rows: tuple(_pair(r) for r in rows)
    )


@attrs.frozen
class RegularRefreshConfig:
    rows_per_ref: int = 1
    full_pass_period_refs: Optional[int] = None
    refresh_slots: int = 8192

    @property
    def period(self) -> int:
        if self.full_pass_period_refs is not None:
            return self.full_pass_period_refs
        return math.ceil(self.refresh_slots / self.rows_per_ref)


@attrs.frozen
class CounterBasedConfig:
    table_size: int = 16
    per_bank: bool = True
    evict_policy: str = "min_counter"
    reset_on_detect: bool = True
    trefb_enabled: bool = True
    trefb_resets: bool = True
    clear_on_detect: bool = False


@attrs.frozen
class SamplingBasedConfig:
    capacity: int = 1
    shared_across_banks: bool = True
    sample_guarantee_window: int = 2048
    clear_on_trr: bool = False
    # free-running sample gaps are drawn from [1, gap_factor * sample_guarantee_window]
    gap_factor: int = 4


@attrs.frozen
class WindowBasedConfig:
    window_size: int = 2048
    defer_when_empty: bool = True
    early_bias: str = "rank"
    # ACTs since the last TRR refresh that make a recorded row a potential aggressor
    aggressor_threshold: int = 64
    # weight of the n-th potential aggressor, in first-ACT order, under "rank"
    rank_decay: float = 0.6


def _span(value) -> Span:
    if isinstance(value, str):
        return value
    return tuple(sorted(int(v) for v in value))


@attrs.frozen
class TrrMechanismConfig:
    variant: str = "none"
    trr_ref_period: int = 1
    neighbor_span: Span = attrs.field(default=(-1, 1), converter=_span)
    label: str = "none"
    counter: Optional[CounterBasedConfig] = None
    sampling: Optional[SamplingBasedConfig] = None
    window: Optional[WindowBasedConfig] = None


@attrs.frozen
class DeviceConfig:
    banks: int = 16
    rows_per_bank: int = 2048
    row_bits: int = 1024
    timing: TimingParams = TimingParams()
    retention: RetentionModelConfig = RetentionModelConfig()
    disturbance: DisturbanceModelConfig = DisturbanceModelConfig()
    mapping: RowMappingConfig = RowMappingConfig()
    regular_refresh: RegularRefreshConfig = RegularRefreshConfig()
    trr: TrrMechanismConfig = TrrMechanismConfig()
    seed: int = 0
    name: str = "custom"
    pins: int = 8

    @property
    def physical_rows(self) -> int:
        return self.rows_per_bank + self.mapping.spare_rows

    def validate(self) -> "DeviceConfig":
        _check(1 <= self.banks <= 64, "banks", f"must be in 1..64, got {self.banks}")
        _check(self.rows_per_bank >= 64, "rows_per_bank", f"must be >= 64, got {self.rows_per_bank}")
        _check(
            self.row_bits >= 64 and self.row_bits % 64 == 0,
            "row_bits", f"must be a multiple of 64 and >= 64, got {self.row_bits}",
        )
        _check(0 <= self.seed < 2**64, "seed", "must be a 64-bit unsigned value")
        _check(self.pins in (4, 8, 16), "pins", f"must be 4, 8 or 16, got {self.pins}")
        self._validate_timing()
        self._validate_retention()
        self._validate_disturbance()
        self._validate_mapping()
        self._validate_refresh()
        self._validate_trr()
        return self

    def _validate_timing(self):
        t = self.timing
        for name in ("t_act_to_pre", "t_pre_to_act", "t_ref", "t_faw_window", "ref_interval"):
            _check(getattr(t, name) > 0, f"timing.{name}", "must be > 0")
        _check(t.max_acts_in_window >= 1, "timing.max_acts_in_window", "must be >= 1")
        _check(t.ref_interval > t.t_ref, "timing.ref_interval", "must exceed t_ref")

    def _validate_retention(self):
        r = self.retention
        q = r.retention_quantum_ms
        _check(q > 0, "retention.retention_quantum_ms", "must be > 0")
        _check(
            r.weak_retention_min_ms >= 2 * q,
            "retention.weak_retention_min_ms", "must be >= 2 * retention_quantum_ms",
        )
        _check(
            r.weak_retention_min_ms <= r.weak_retention_max_ms,
            "retention.weak_retention_max_ms", "must be >= weak_retention_min_ms",
        )
        _check(
            r.weak_retention_max_ms + 2 * q < r.base_retention_ms,
            "retention.base_retention_ms", "must exceed every weak and VRT retention",
        )
        for name in ("weak_row_fraction", "vrt_row_fraction"):
            value = getattr(r, name)
            _check(0.0 <= value <= 1.0, f"retention.{name}", f"must be in [0, 1], got {value}")
        lo, hi = r.weak_cells_per_weak_row
        _check(1 <= lo <= hi, "retention.weak_cells_per_weak_row", "must satisfy 1 <= min <= max")
        _check(r.vrt_toggle_period_ms > 0, "retention.vrt_toggle_period_ms", "must be > 0")

    def _validate_disturbance(self):
        d = self.disturbance
        _check(d.hc_first > 0, "disturbance.hc_first", "must be > 0")
        _check(d.per_cell_threshold_spread >= 1.0, "disturbance.per_cell_threshold_spread", "must be >= 1")
        _check(d.distance2_factor >= 4.0, "disturbance.distance2_factor", "must be >= 4")
        _check(d.single_sided_factor >= 2.0, "disturbance.single_sided_factor", "must be >= 2")
        lo, hi = d.vulnerable_cells_per_row
        _check(0 <= lo <= hi, "disturbance.vulnerable_cells_per_row", "must satisfy 0 <= min <= max")
        _check(hi <= self.row_bits, "disturbance.vulnerable_cells_per_row", "exceeds row_bits")

    def _validate_mapping(self):
        m = self.mapping
        n = self.rows_per_bank
        _check(m.scheme in MAPPING_SCHEMES, "mapping.scheme", f"unknown scheme '{m.scheme}'")
        _check(m.spare_rows >= 0, "mapping.spare_rows", "must be >= 0")
        if m.scheme == "xor_scramble":
            _check(0 <= m.xor_mask < n, "mapping.xor_mask", "must be in [0, rows_per_bank)")
            block = 1 << m.xor_mask.bit_length()
            _check(n % block == 0, "mapping.xor_mask", "rows_per_bank must be a multiple of the mask span")
        if m.scheme == "block_reverse":
            _check(m.block_size >= 2 and n % m.block_size == 0,
                   "mapping.block_size", "must be >= 2 and divide rows_per_bank")
        logical = [row for row, _ in m.remapped_rows]
        spares = [spare for _, spare in m.remapped_rows]
        _check(len(set(logical)) == len(logical), "mapping.remapped_rows", "logical rows repeat")
        _check(len(set(spares)) == len(spares), "mapping.remapped_rows", "spare rows repeat")
        for row, spare in m.remapped_rows:
            _check(0 <= row < n, "mapping.remapped_rows", f"logical row {row} out of range")
            _check(n <= spare < n + m.spare_rows, "mapping.remapped_rows",
                   f"physical row {spare} is not in the spare region")

    def _validate_refresh(self):
        rr = self.regular_refresh
        _check(rr.rows_per_ref >= 1, "regular_refresh.rows_per_ref", "must be >= 1")
        _check(rr.refresh_slots >= 1, "regular_refresh.refresh_slots", "must be >= 1")
        if rr.full_pass_period_refs is not None:
            _check(rr.full_pass_period_refs >= 1, "regular_refresh.full_pass_period_refs", "must be >= 1")
        _check(
            rr.rows_per_ref * rr.period >= self.physical_rows,
            "regular_refresh.full_pass_period_refs",
            f"rows_per_ref * period = {rr.rows_per_ref * rr.period} < {self.physical_rows} rows",
        )

    def _validate_trr(self):
        t = self.trr
        _check(t.variant in VARIANTS, "trr.variant", f"unknown variant '{t.variant}'")
        _check(t.trr_ref_period >= 1, "trr.trr_ref_period", "must be >= 1")
        if isinstance(t.neighbor_span, str):
            _check(t.neighbor_span == "pair", "trr.neighbor_span", "only 'pair' is a named span")
        else:
            _check(len(t.neighbor_span) > 0 and 0 not in t.neighbor_span,
                   "trr.neighbor_span", "offsets must be nonzero")
        if t.variant == "counter":
            _check(t.counter is not None, "trr.counter", "required for the counter variant")
            _check(t.counter.table_size >= 1, "trr.counter.table_size", "must be >= 1")
            _check(t.counter.evict_policy in EVICT_POLICIES, "trr.counter.evict_policy",
                   f"unknown policy '{t.counter.evict_policy}'")
        if t.variant == "sampling":
            _check(t.sampling is not None, "trr.sampling", "required for the sampling variant")
            _check(t.sampling.capacity >= 1, "trr.sampling.capacity", "must be >= 1")
            _check(t.sampling.sample_guarantee_window > 0,
                   "trr.sampling.sample_guarantee_window", "must be > 0")
            _check(t.sampling.gap_factor >= 1, "trr.sampling.gap_factor", "must be >= 1")
        if t.variant == "window":
            _check(t.window is not None, "trr.window", "required for the window variant")
            _check(t.window.window_size > 0, "trr.window.window_size", "must be > 0")
            _check(t.window.early_bias in EARLY_BIAS_POLICIES, "trr.window.early_bias",
                   f"unknown policy '{t.window.early_bias}'")
            _check(t.window.aggressor_threshold >= 1, "trr.window.aggressor_threshold", "must be >= 1")
            _check(0.0 < t.window.rank_decay <= 1.0, "trr.window.rank_decay", "must be in (0, 1]")


def _check(condition: bool, field: str, message: str):
    if not condition:
        raise InvalidConfigError(field, message)


# Building configs from nested mappings (TOML tables) ------------------------------------------

_SECTION_TYPES = {
    "timing": TimingParams,
    "retention": RetentionModelConfig,
    "disturbance": DisturbanceModelConfig,
    "mapping": RowMappingConfig,
    "regular_refresh": RegularRefreshConfig,
}

_TRR_SECTION_TYPES = {
    "counter": CounterBasedConfig,
    "sampling": SamplingBasedConfig,
    "window": WindowBasedConfig,
}


def _build(cls, data: Mapping[str, Any], section: str):
    known = {f.name for f in attrs.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise InvalidConfigError(f"{section}.{sorted(unknown)[0]}", "unknown key")
    return cls(**dict(data))


def trr_config_from_mapping(data: Mapping[str, Any]) -> TrrMechanismConfig:
    data = dict(data)
    nested = {}
    for key, cls in _TRR_SECTION_TYPES.items():
        if key in data:
            nested[key] = _build(cls, data.pop(key), f"trr.{key}")
    return _build(TrrMechanismConfig, {**data, **nested}, "trr")


def device_config_from_mapping(data: Mapping[str, Any]) -> DeviceConfig:
    data = dict(data)
    nested: Dict[str, Any] = {}
    for key, cls in _SECTION_TYPES.items():
        if key in data:
            nested[key] = _build(cls, data.pop(key), key)
    if "trr" in data:
        nested["trr"] = trr_config_from_mapping(data.pop("trr"))
    return _build(DeviceConfig, {**data, **nested}, "device")


def merge_overrides(config: DeviceConfig, overrides: Mapping[str, Any]) -> DeviceConfig:
    """Apply nested overrides (as parsed from a user TOML file) onto a config."""
    changes: Dict[str, Any] = {}
    for key, value in overrides.items():
        if key in _SECTION_TYPES and isinstance(value, Mapping):
            changes[key] = attrs.evolve(getattr(config, key), **dict(value))
        elif key == "trr" and isinstance(value, Mapping):
            trr = config.trr
            trr_changes = dict(value)
            for sub in _TRR_SECTION_TYPES:
                if sub in trr_changes and isinstance(trr_changes[sub], Mapping):
                    current = getattr(trr, sub) or _TRR_SECTION_TYPES[sub]()
                    trr_changes[sub] = attrs.evolve(current, **dict(trr_changes[sub]))
            changes["trr"] = attrs.evolve(trr, **trr_changes)
        else:
            changes[key] = value
    try:
        return attrs.evolve(config, **changes)
    except TypeError as e:
        raise InvalidConfigError("overrides", str(e)) from e
