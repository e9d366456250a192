"""Row Scout: find groups of rows with one uniform, consistent retention time.

Groups are the probes of the TRR side channel. A group is a set of physical
rows laid out like ``R-R`` (R = profiled row, ``-`` = a row in between, where
the aggressor goes). Refresh is never issued while profiling.
"""
from __future__ import annotations

import logging
from typing import Iterable, List, Set, Tuple

import attrs

from trrsim.config import NS_PER_MS
from trrsim.device import ALL_ONES, DramDevice
from trrsim.errors import InsufficientGroupsError, InvalidConfigError, OutOfRangeError

logger = logging.getLogger(__name__)

MAX_LAYOUT = 32


def _check_layout(instance, attribute, value: str):
    if not value or len(value) > MAX_LAYOUT or set(value) - {"R", "-"} or "R" not in value:
        raise InvalidConfigError("layout", f"'{value}' must be 1..{MAX_LAYOUT} of 'R'/'-' with at least one 'R'")


@attrs.frozen
class RowGroupLayout:
    pattern: str = attrs.field(validator=_check_layout)

    @property
    def offsets(self) -> Tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.pattern) if c == "R")

    @property
    def gap_offsets(self) -> Tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.pattern) if c == "-")

    @property
    def span(self) -> int:
        return len(self.pattern)

    def __str__(self):
        return self.pattern


@attrs.frozen
class ProfilingConfig:
    row_range: Tuple[int, int]
    layout: RowGroupLayout
    bank: int = 0
    groups_needed: int = 1
    t_initial_ms: int = 100
    t_step_ms: int = 50
    t_max_ms: int = 1000
    consistency_checks: int = 1000
    data_pattern: int = ALL_ONES
    # free rows kept between neighboring groups
    min_gap: int = 4
    # rows already in use; groups keep min_gap away from them
    exclude: Tuple[int, ...] = attrs.field(converter=tuple, default=())

    def validate(self) -> "ProfilingConfig":
        if not (self.t_initial_ms >= self.t_step_ms > 0):
            raise InvalidConfigError("t_initial_ms", "must satisfy t_initial >= t_step > 0")
        if self.groups_needed < 1:
            raise InvalidConfigError("groups_needed", "must be >= 1")
        if self.consistency_checks < 1:
            raise InvalidConfigError("consistency_checks", "must be >= 1")
        lo, hi = self.row_range
        if not 0 <= lo < hi:
            raise InvalidConfigError("row_range", f"[{lo}, {hi}) is empty or negative")
        return self


@attrs.frozen
class RowGroup:
    bank: int
    rows: Tuple[int, ...]
    anchor: int
    retention_ms: int
    layout: RowGroupLayout
    step_ms: int = 50

    @property
    def fail_ms(self) -> int:
        """Exposure at which every member reliably fails."""
        return self.retention_ms + self.step_ms

    @property
    def gap_rows(self) -> Tuple[int, ...]:
        return tuple(self.anchor + off for off in self.layout.gap_offsets)

    @property
    def footprint(self) -> Tuple[int, int]:
        return self.anchor, self.anchor + self.layout.span

    def to_record(self) -> dict:
        return {
            "bank": self.bank,
            "rows": list(self.rows),
            "anchor": self.anchor,
            "T_ms": self.retention_ms,
            "layout": self.layout.pattern,
        }


def _logical_rows(device: DramDevice, bank: int, rows: Iterable[int]) -> List[Tuple[int, int]]:
    out = []
    for p in rows:
        try:
            out.append((p, device.to_logical(bank, p)))
        except OutOfRangeError:
            continue
    return out


def expose_rows(device: DramDevice, bank: int, rows: Iterable[int], t_ms: int,
                pattern: int = ALL_ONES) -> Set[int]:
    """Write ``rows``, leave them unrefreshed for exactly ``t_ms``, return those that failed."""
    pairs = _logical_rows(device, bank, rows)
    start = device.now
    for _, logical in pairs:
        device.write_row(bank, logical, pattern)
    device.wait(max(0, t_ms * NS_PER_MS - (device.now - start)))
    return {p for p, logical in pairs if not device.read_row(bank, logical).intact}


def scan_failing_rows(device: DramDevice, bank: int, row_range: Tuple[int, int], t_ms: int,
                      pattern: int = ALL_ONES) -> Set[int]:
    lo, hi = row_range
    limit = device.config.physical_rows
    if not 0 <= lo < hi <= limit:
        raise OutOfRangeError("scan range end", hi, limit + 1)
    failing = expose_rows(device, bank, range(lo, hi), t_ms, pattern)
    logger.debug(f"Scan bank {bank} [{lo},{hi}) at {t_ms} ms: {len(failing)} failing rows")
    return failing


def _candidates(cfg: ProfilingConfig, rows: Set[int]) -> List[Tuple[int, ...]]:
    lo, hi = cfg.row_range
    offsets = cfg.layout.offsets
    taken = sorted(cfg.exclude)
    found = []
    next_free = lo
    for anchor in range(lo, hi - cfg.layout.span + 1):
        if anchor < next_free:
            continue
        if any(anchor - cfg.min_gap <= t < anchor + cfg.layout.span + cfg.min_gap for t in taken):
            continue
        members = tuple(anchor + off for off in offsets)
        if all(m in rows for m in members):
            found.append(members)
            next_free = anchor + cfg.layout.span + cfg.min_gap
    return found


def _consistent(device: DramDevice, cfg: ProfilingConfig, groups: List[Tuple[int, ...]],
                retention_ms: int) -> List[Tuple[int, ...]]:
    members = {m for g in groups for m in g}
    for _ in range(cfg.consistency_checks):
        if not members:
            break
        members -= expose_rows(device, cfg.bank, sorted(members), retention_ms, cfg.data_pattern)
        failed = expose_rows(device, cfg.bank, sorted(members), retention_ms + cfg.t_step_ms, cfg.data_pattern)
        members &= failed
    return [g for g in groups if all(m in members for m in g)]


def find_row_groups(device: DramDevice, cfg: ProfilingConfig) -> List[RowGroup]:
    cfg.validate()
    step = cfg.t_step_ms
    t = cfg.t_initial_ms
    prev = scan_failing_rows(device, cfg.bank, cfg.row_range, t - step, cfg.data_pattern) if t > step else set()
    best = 0
    while t <= cfg.t_max_ms:
        failing = scan_failing_rows(device, cfg.bank, cfg.row_range, t, cfg.data_pattern)
        retention = t - step
        candidates = _candidates(cfg, failing - prev)
        if len(candidates) >= cfg.groups_needed:
            groups = _consistent(device, cfg, candidates, retention)
            best = max(best, len(groups))
            if len(groups) >= cfg.groups_needed:
                logger.info(
                    f"Row scout: {len(groups)} '{cfg.layout}' groups at T={retention} ms in bank {cfg.bank}"
                )
                return [
                    RowGroup(cfg.bank, g, g[0] - cfg.layout.offsets[0], retention, cfg.layout, step)
                    for g in groups
                ]
        else:
            best = max(best, len(candidates))
        prev = failing
        t += step
    raise InsufficientGroupsError(cfg.groups_needed, best, cfg.t_max_ms)


def revalidate(device: DramDevice, group: RowGroup, trials: int) -> bool:
    """Re-test a group ``trials`` times: retain at T, fail at T + step."""
    for _ in range(trials):
        if expose_rows(device, group.bank, group.rows, group.retention_ms):
            return False
        if len(expose_rows(device, group.bank, group.rows, group.fail_ms)) != len(group.rows):
            return False
    return True
