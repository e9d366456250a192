"""TRR Analyzer: run hammer/REF experiments against retention-profiled probes.

An experiment writes the probe rows, waits half the probes' failure time,
hammers and issues REFs, waits out the rest of the failure time and reads the
probes back. A probe that reads back intact was refreshed during the
hammer/REF phase; if the learned regular-refresh schedule does not explain that
refresh, it is attributed to TRR.
"""
from __future__ import annotations

import logging
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import attrs

from trrsim.config import NS_PER_MS
from trrsim.device import ALL_ONES, ALL_ZEROS, DramDevice
from trrsim.errors import (
    BudgetExceededError,
    InconclusiveError,
    InvalidConfigError,
    OutOfRangeError,
    ProbeOverlapError,
)
from trrsim.rng import DeterministicRNG, derive_seed
from trrsim.scout import RowGroup

logger = logging.getLogger(__name__)

HAMMER_MODES = ("interleaved", "cascaded")
DUMMY_DISTANCE = 100
REFRESH_WINDOW_MS = 64
RESET_DUMMIES_PER_INTERVAL = 8
RESET_HAMMERS_PER_DUMMY = 18


@attrs.frozen
class Aggressor:
    row: int
    hammers: int
    # None means the bank of the experiment's first probe group
    bank: Optional[int] = None


def _aggressors(value) -> Tuple[Aggressor, ...]:
    return tuple(a if isinstance(a, Aggressor) else Aggressor(*a) for a in value)


@attrs.frozen
class ExperimentConfig:
    groups: Tuple[RowGroup, ...] = attrs.field(converter=tuple)
    aggressors: Tuple[Aggressor, ...] = attrs.field(converter=_aggressors, default=())
    hammer_mode: str = "cascaded"
    dummy_rows: int = 0
    dummy_hammers: int = 0
    dummies_first: bool = False
    refs_per_round: int = 1
    rounds: int = 1
    # REFs issued at the start of the hammer/REF phase, before any hammering
    pre_refs: int = 0
    reset_trr_state: bool = False
    reset_periods: int = 10
    reset_dummy_rows: int = 128
    # None leaves the aggressor rows unwritten (no ACT before hammering)
    aggressor_data: Optional[int] = ALL_ZEROS
    ref_synchronized: bool = False
    # random 0..jitter_refs-1 extra REFs before the rounds
    jitter_refs: int = 0

    def validate(self) -> "ExperimentConfig":
        if not self.groups:
            raise InvalidConfigError("groups", "at least one probe group is required")
        if self.hammer_mode not in HAMMER_MODES:
            raise InvalidConfigError("hammer_mode", f"unknown mode '{self.hammer_mode}'")
        for name in ("dummy_rows", "dummy_hammers", "refs_per_round", "rounds", "pre_refs",
                     "reset_periods", "reset_dummy_rows", "jitter_refs"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(name, "must be >= 0")
        if any(a.hammers < 0 for a in self.aggressors):
            raise InvalidConfigError("aggressors", "hammer counts must be >= 0")
        return self

    @property
    def bank(self) -> int:
        return self.groups[0].bank

    @property
    def exposure_ms(self) -> int:
        return max(g.fail_ms for g in self.groups)

    def probes(self) -> List[Tuple[int, int]]:
        return sorted({(g.bank, r) for g in self.groups for r in g.rows})

    def aggressor_rows(self) -> List[Tuple[int, int]]:
        return [(self.bank if a.bank is None else a.bank, a.row) for a in self.aggressors]


@attrs.frozen
class ProbeVerdict:
    bank: int
    row: int
    bit_flips: int
    refreshed: bool
    attribution: str  # "TRR", "Regular" or "None"


@attrs.frozen
class ExperimentResult:
    verdicts: Tuple[ProbeVerdict, ...]
    ref_start: int
    ref_end: int
    round_refs: Tuple[Tuple[int, ...], ...]
    timestamps: Tuple[Tuple[str, int], ...]

    def verdict(self, row: int, bank: Optional[int] = None) -> ProbeVerdict:
        for v in self.verdicts:
            if v.row == row and (bank is None or v.bank == bank):
                return v
        raise KeyError(row)

    def survived(self, row: int, bank: Optional[int] = None) -> bool:
        return self.verdict(row, bank).refreshed

    def trr_rows(self, bank: Optional[int] = None) -> Set[int]:
        return {v.row for v in self.verdicts if v.attribution == "TRR" and (bank is None or v.bank == bank)}

    def regular_rows(self) -> Set[int]:
        return {v.row for v in self.verdicts if v.attribution == "Regular"}

    def to_record(self) -> dict:
        return {
            "refs": [self.ref_start, self.ref_end],
            "probes": [attrs.asdict(v) for v in self.verdicts],
            "trace": [list(r) for r in self.round_refs],
        }


@attrs.frozen
class RegularSchedule:
    """Learned regular refresh: REF n refreshes slot (n - origin) mod period."""

    period: int
    rows_per_ref: int
    origin: int

    def refresh_refs(self, row: int, start: int, end: int) -> range:
        target = (self.origin + row // self.rows_per_ref) % self.period
        first = start + (target - start) % self.period
        return range(first, end, self.period)

    def covers(self, row: int, start: int, end: int) -> bool:
        return len(self.refresh_refs(row, start, end)) > 0


# Small command helpers -------------------------------------------------------------------------

def _logical(device: DramDevice, bank: int, row: int) -> int:
    return device.to_logical(bank, row)


def issue_refs(device: DramDevice, count: int, interval_start: Optional[int] = None):
    """Issue ``count`` REFs one ref_interval apart.

    ``interval_start`` is when the current interval began (hammering time already
    spent in it is not waited again).
    """
    t = device.timing
    for i in range(count):
        start = interval_start if (i == 0 and interval_start is not None) else device.now
        device.ref()
        device.wait(max(0, t.ref_interval - (device.now - start)))


def select_dummies(device: DramDevice, bank: int, count: int, avoid: Iterable[int],
                   min_distance: int = DUMMY_DISTANCE) -> List[int]:
    """Physical rows walking outward from the bank midpoint, far from ``avoid``."""
    avoid = sorted(set(avoid))
    rows = device.config.rows_per_bank
    mid = rows // 2
    chosen: List[int] = []
    for step in range(rows):
        for p in ((mid + step,) if step == 0 else (mid + step, mid - step)):
            if not 0 <= p < rows:
                continue
            if any(abs(p - a) < min_distance for a in avoid):
                continue
            chosen.append(p)
            if len(chosen) == count:
                return chosen
    raise OutOfRangeError("dummy rows available", len(chosen), count)


def _hammer_rows(device: DramDevice, bank: int, rows: Sequence[Tuple[int, int]], mode: str):
    """Hammer (physical row, count) pairs of one bank."""
    if mode == "cascaded":
        for row, count in rows:
            device.hammer(bank, _logical(device, bank, row), count)
        return
    remaining = [[row, count] for row, count in rows if count > 0]
    while remaining:
        step = min(count for _, count in remaining)
        device.hammer_interleaved(bank, [_logical(device, bank, r) for r, _ in remaining], step)
        for entry in remaining:
            entry[1] -= step
        remaining = [e for e in remaining if e[1] > 0]


def _hammer_aggressors(device: DramDevice, cfg: ExperimentConfig):
    by_bank: Dict[int, List[Tuple[int, int]]] = {}
    for a in cfg.aggressors:
        by_bank.setdefault(cfg.bank if a.bank is None else a.bank, []).append((a.row, a.hammers))
    for bank, rows in by_bank.items():
        _hammer_rows(device, bank, rows, cfg.hammer_mode)


# Operations ------------------------------------------------------------------------------------

def reset_trr_state(device: DramDevice, avoid: Iterable[Tuple[int, int]] = (), reset_periods: int = 10,
                    dummy_rows: int = 128, banks: Sequence[int] = (0,)):
    """Flush tracker state: REF at ref_interval for reset_periods x 64 ms, hammering dummies.

    Every interval hammers the next few of ``dummy_rows`` dummies in each of
    ``banks``; ``avoid`` holds (bank, physical row) pairs the dummies keep away from.
    """
    avoid = list(avoid)
    plan = []
    for bank in banks:
        rows = select_dummies(device, bank, dummy_rows, [row for b, row in avoid if b == bank])
        plan.append((bank, [_logical(device, bank, d) for d in rows]))
    refs = reset_periods * (REFRESH_WINDOW_MS * NS_PER_MS // device.timing.ref_interval)
    per_interval = min(RESET_DUMMIES_PER_INTERVAL, dummy_rows)
    cursor = 0
    for _ in range(refs):
        start = device.now
        for bank, logical in plan:
            batch = [logical[(cursor + i) % len(logical)] for i in range(per_interval)]
            device.hammer_interleaved(bank, batch, RESET_HAMMERS_PER_DUMMY)
        cursor = (cursor + per_interval) % dummy_rows
        issue_refs(device, 1, interval_start=start)
    logger.debug(f"TRR state reset: {refs} REFs over {dummy_rows} dummies in banks {list(banks)}")


def _check_overlap(cfg: ExperimentConfig):
    probes = set(cfg.probes())
    for key in cfg.aggressor_rows():
        if key in probes:
            raise ProbeOverlapError(f"aggressor row {key[1]} in bank {key[0]} is a probe row")


def _check_budget(device: DramDevice, cfg: ExperimentConfig):
    acts = sum(a.hammers for a in cfg.aggressors) + cfg.dummy_rows * cfg.dummy_hammers
    available = device.timing.hammers_per_interval * max(1, cfg.refs_per_round)
    if acts > available:
        raise BudgetExceededError(acts, available, "ACTs per round")


def run_experiment(device: DramDevice, cfg: ExperimentConfig,
                   schedule: Optional[RegularSchedule] = None,
                   rng: Optional[DeterministicRNG] = None) -> ExperimentResult:
    cfg.validate()
    _check_overlap(cfg)
    if cfg.ref_synchronized:
        _check_budget(device, cfg)

    probes = cfg.probes()
    aggressors = cfg.aggressor_rows()
    occupied = [row for _, row in probes + aggressors]
    dummies = select_dummies(device, cfg.bank, cfg.dummy_rows, occupied) if cfg.dummy_rows else []
    stamps = []

    if cfg.reset_trr_state:
        banks = sorted({b for b, _ in probes + aggressors})
        reset_trr_state(device, probes + aggressors, cfg.reset_periods, cfg.reset_dummy_rows, banks)
        stamps.append(("reset_done", device.now))

    exposure = cfg.exposure_ms * NS_PER_MS
    t0 = device.now
    for bank, row in probes:
        device.write_row(bank, _logical(device, bank, row), ALL_ONES)
    if cfg.aggressor_data is not None:
        for bank, row in aggressors:
            device.write_row(bank, _logical(device, bank, row), cfg.aggressor_data)
    device.wait(max(0, exposure // 2 - (device.now - t0)))

    stamps.append(("phase2_start", device.now))
    ref_start = device.ref_count
    extra = cfg.pre_refs
    if cfg.jitter_refs:
        rng = rng or DeterministicRNG(derive_seed(device.config.seed, "jitter", device.ref_count))
        extra += rng.randbelow(cfg.jitter_refs)
    issue_refs(device, extra)

    round_refs = []
    dummy_plan = [(d, cfg.dummy_hammers) for d in dummies]
    for _ in range(cfg.rounds):
        start = device.now
        if cfg.dummies_first:
            _hammer_rows(device, cfg.bank, dummy_plan, "cascaded")
        _hammer_aggressors(device, cfg)
        if not cfg.dummies_first:
            _hammer_rows(device, cfg.bank, dummy_plan, "cascaded")
        first = device.ref_count
        issue_refs(device, cfg.refs_per_round, interval_start=start)
        round_refs.append(tuple(range(first, device.ref_count)))
    ref_end = device.ref_count
    stamps.append(("phase2_end", device.now))

    device.wait(max(0, exposure - (device.now - t0)))
    verdicts = []
    for bank, row in probes:
        flips = device.read_row(bank, _logical(device, bank, row)).flip_count
        refreshed = flips == 0
        if not refreshed:
            attribution = "None"
        elif schedule is not None and schedule.covers(row, ref_start, ref_end):
            attribution = "Regular"
        else:
            attribution = "TRR"
        verdicts.append(ProbeVerdict(bank, row, flips, refreshed, attribution))
    stamps.append(("read_done", device.now))

    result = ExperimentResult(tuple(verdicts), ref_start, ref_end, tuple(round_refs), tuple(stamps))
    logger.debug(
        f"Experiment refs [{ref_start},{ref_end}): TRR {sorted(result.trr_rows())}, "
        f"Regular {sorted(result.regular_rows())}"
    )
    return result


def verify_adjacency(device: DramDevice, bank: int, aggressor: int, probe_rows: Sequence[int],
                     hammers: int = 300_000, partner: Optional[int] = None) -> bool:
    """True iff hammering ``aggressor`` (logical) with refresh disabled flips every probe.

    ``partner`` (logical) is hammered alongside for a double-sided dose when the
    caller has one.
    """
    for row in probe_rows:
        device.write_row(bank, row, ALL_ONES)
    rows = [aggressor] if partner is None else [aggressor, partner]
    device.hammer_interleaved(bank, rows, hammers)
    flipped = [not device.read_row(bank, row).intact for row in probe_rows]
    for row in probe_rows:
        device.write_row(bank, row, ALL_ONES)
    return all(flipped)


def measure_hc_first(device: DramDevice, bank: int, victim: int, limit: int = 1 << 21) -> Optional[int]:
    """Smallest double-sided hammer count (per aggressor) flipping ``victim``; None above ``limit``."""

    def flips_at(n: int) -> bool:
        device.write_row(bank, victim, ALL_ONES)
        device.hammer_interleaved(bank, [victim - 1, victim + 1], n)
        return not device.read_row(bank, victim).intact

    if not 1 <= victim < device.config.rows_per_bank - 1:
        raise OutOfRangeError("victim row", victim, device.config.rows_per_bank - 1)
    if not flips_at(limit):
        return None
    lo, hi = 0, limit
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if flips_at(mid):
            hi = mid
        else:
            lo = mid
    return hi


# Regular refresh schedule ----------------------------------------------------------------------

def _exposure_survives(device: DramDevice, bank: int, row: int, exposure_ms: int, refs: int) -> bool:
    exposure = exposure_ms * NS_PER_MS
    logical = _logical(device, bank, row)
    t0 = device.now
    device.write_row(bank, logical, ALL_ONES)
    device.wait(max(0, exposure // 2 - (device.now - t0)))
    issue_refs(device, refs)
    device.wait(max(0, exposure - (device.now - t0)))
    return device.read_row(bank, logical).intact


def _idle_until(device: DramDevice, ref_index: int):
    if device.ref_count < ref_index:
        issue_refs(device, ref_index - device.ref_count)


def _single_ref_scan(device: DramDevice, group: RowGroup, row: int, lo: int, hi: int) -> int:
    """First REF index in [lo, hi] whose single-REF exposure keeps ``row`` alive."""
    _idle_until(device, lo)
    while device.ref_count <= hi:
        n = device.ref_count
        if _exposure_survives(device, group.bank, row, group.fail_ms, 1):
            return n
    raise InconclusiveError("regular refresh", f"row {row} not refreshed in REFs [{lo}, {hi}]")


def learn_regular_schedule(device: DramDevice, group: RowGroup, far_row: Optional[int] = None,
                           burst: int = 64, max_period: int = 16384) -> RegularSchedule:
    """Learn period, rows per REF and phase of regular refresh from probe survivals.

    Must run while the TRR does not target the probe rows (e.g. right after a
    TRR reset, nothing hammered nearby).
    """
    anchor = group.rows[0]
    hits = []
    start_ref = device.ref_count
    while len(hits) < 2:
        s = device.ref_count
        if _exposure_survives(device, group.bank, anchor, group.fail_ms, burst):
            hits.append((s, device.ref_count))
        if device.ref_count - start_ref > 2 * max_period + 2 * burst:
            raise InconclusiveError("regular refresh", f"no coverage of row {anchor} within {2 * max_period} REFs")
    (s1, e1), (s2, e2) = hits
    # refresh c1 in [s1, e1), c2 = c1 + P in [s2, e2)
    c3 = _single_ref_scan(device, group, anchor, s2 + (s2 - e1 + 1), e2 - 1 + (e2 - 1 - s1))
    c4 = _single_ref_scan(device, group, anchor, c3 + (c3 - e2 + 1), c3 + (c3 - s2))
    period = c4 - c3

    rows_per_ref = 1
    if far_row is not None and far_row > anchor:
        distance = far_row - anchor
        c_far = _single_ref_scan(device, group, far_row, c4 + 1, c4 + distance)
        rows_per_ref = max(1, round(distance / (c_far - c4)))
    origin = (c4 - anchor // rows_per_ref) % period
    logger.info(f"Regular refresh: period {period} REFs, {rows_per_ref} rows per REF, origin {origin}")
    return RegularSchedule(period, rows_per_ref, origin)


def infer_regular_refresh_period(device: DramDevice, probe: RowGroup, **kwargs) -> int:
    return learn_regular_schedule(device, probe, **kwargs).period
