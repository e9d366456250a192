"""TRR-bypass access patterns, their executor, hammer sweeps and vulnerability scans.

A pattern is a short list of hammer operations repeated once per "window" of
``window_refs`` refresh intervals. The executor packs the operations into
intervals, issuing a REF at every interval deadline, so a pattern that fits
its ACT budget never misses tREFI.
"""
from __future__ import annotations

import csv
import logging
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import attrs
import numpy as np

from trrsim.config import DeviceConfig, TimingParams
from trrsim.device import ALL_ONES, DramDevice, new_device
from trrsim.errors import BudgetExceededError, ConfigParseError, InvalidConfigError, TimingViolationError
from trrsim.presets import best_params as catalog_best_params

logger = logging.getLogger(__name__)

FAMILIES = ("counter_evict", "sampler_flood", "window_preload", "plain_single_sided", "plain_double_sided")
DUMMY_DISTANCE = 100
PRELOAD_DUMMIES = 16
# victim rows between scanned positions when a scan is not given explicit positions
SCAN_STRIDE = 64
CHUNK_BITS = 64


# Operations ------------------------------------------------------------------------------------

@attrs.frozen
class Hammer:
    row: int
    count: int
    bank: int = 0


@attrs.frozen
class HammerInterleaved:
    rows: Tuple[int, ...] = attrs.field(converter=tuple)
    count: int
    bank: int = 0


@attrs.frozen
class HammerMultiBank:
    # (bank, row), one row per bank, their ACTs issued together
    rows: Tuple[Tuple[int, int], ...] = attrs.field(converter=lambda v: tuple(tuple(e) for e in v))
    count: int


@attrs.frozen
class SyncToRef:
    """End the current interval: wait for its deadline and REF."""


@attrs.frozen
class SyncToTrrRef:
    """REF until the REF count is a multiple of the pattern's window_refs."""


PatternOp = Union[Hammer, HammerInterleaved, HammerMultiBank, SyncToRef, SyncToTrrRef]


def _acts_in_bank(op: PatternOp, bank: int) -> int:
    if isinstance(op, Hammer):
        return op.count if op.bank == bank else 0
    if isinstance(op, HammerInterleaved):
        return op.count * len(op.rows) if op.bank == bank else 0
    if isinstance(op, HammerMultiBank):
        return op.count if any(b == bank for b, _ in op.rows) else 0
    return 0


@attrs.frozen
class AccessPattern:
    family: str
    bank: int
    aggressors: Tuple[int, ...] = attrs.field(converter=tuple)
    dummies: Tuple[Tuple[int, int], ...] = attrs.field(converter=lambda v: tuple(tuple(e) for e in v))
    ops: Tuple[PatternOp, ...] = attrs.field(converter=tuple)
    window_refs: int = 1
    prologue: Tuple[PatternOp, ...] = attrs.field(converter=tuple, default=())
    params: Dict[str, Any] = attrs.field(factory=dict)

    def acts_per_window(self, bank: Optional[int] = None) -> int:
        bank = self.bank if bank is None else bank
        return sum(_acts_in_bank(op, bank) for op in self.ops)

    def check_budget(self, timing: TimingParams = TimingParams()):
        available = self.window_refs * timing.hammers_per_interval
        banks = {self.bank} | {b for b, _ in self.dummies}
        for bank in banks:
            needed = self.acts_per_window(bank)
            if needed > available:
                raise BudgetExceededError(needed, available, f"{self.family} ACTs per {self.window_refs}-REF window")
        return self

    def victim_rows(self, rows_per_bank: int) -> List[int]:
        lo = max(0, min(self.aggressors) - 2)
        hi = min(rows_per_bank, max(self.aggressors) + 3)
        return [r for r in range(lo, hi) if r not in self.aggressors]

    def to_record(self) -> dict:
        return {
            "family": self.family,
            "bank": self.bank,
            "aggressors": list(self.aggressors),
            "window_refs": self.window_refs,
            "acts_per_window": self.acts_per_window(),
            **self.params,
        }


def place_dummies(aggressors: Sequence[int], count: int, rows_per_bank: int = 2048,
                  distance: int = DUMMY_DISTANCE) -> List[int]:
    """``count`` consecutive rows at least ``distance`` rows from every aggressor."""
    top = max(aggressors) + distance
    if top + count <= rows_per_bank:
        return list(range(top, top + count))
    bottom = min(aggressors) - distance - count + 1
    if bottom < 0:
        raise InvalidConfigError("dummies", f"no room for {count} dummy rows {distance} rows from {list(aggressors)}")
    return list(range(bottom, bottom + count))


# Generators ------------------------------------------------------------------------------------

def gen_counter_evict(a0: int, a1: int, aggr_hammers: int, dummies: int = 16, dummy_hammers: int = 6,
                      bank: int = 0, rows_per_bank: int = 2048,
                      timing: TimingParams = TimingParams()) -> AccessPattern:
    """Per interval: A0/A1 interleaved, then the dummies, then REF.

    A warm-up pass over the dummies fills the tracker before the first interval.
    """
    rows = place_dummies((a0, a1), dummies, rows_per_bank)
    ops = [HammerInterleaved((a0, a1), aggr_hammers, bank)]
    if dummies and dummy_hammers:
        ops.append(HammerInterleaved(rows, dummy_hammers, bank))
    ops.append(SyncToRef())
    return AccessPattern(
        family="counter_evict",
        bank=bank,
        aggressors=(a0, a1),
        dummies=[(bank, r) for r in rows],
        ops=ops,
        window_refs=1,
        prologue=[HammerInterleaved(rows, dummy_hammers, bank), SyncToRef()] if dummies and dummy_hammers else [],
        params={"aggr_hammers": aggr_hammers, "dummies": dummies, "dummy_hammers": dummy_hammers},
    ).check_budget(timing)


def gen_sampler_flood(a0: int, a1: int, aggr_hammers_per_window: int, window_refs: int = 4,
                      dummy_banks: int = 4, bank: int = 0, banks: int = 16, rows_per_bank: int = 2048,
                      timing: TimingParams = TimingParams()) -> AccessPattern:
    """Per window: A0/A1, then one dummy in each of ``dummy_banks`` banks for the rest of the budget."""
    budget = window_refs * timing.hammers_per_interval
    dummy_hammers = budget - 2 * aggr_hammers_per_window
    if dummy_hammers < 0:
        raise BudgetExceededError(2 * aggr_hammers_per_window, budget, "sampler_flood aggressor ACTs per window")
    if dummy_banks > banks:
        raise InvalidConfigError("dummy_banks", f"{dummy_banks} dummy banks on a {banks}-bank device")
    dummy_row = place_dummies((a0, a1), 1, rows_per_bank)[0]
    dummies = [((bank + i) % banks, dummy_row) for i in range(dummy_banks)]
    ops: List[PatternOp] = [HammerInterleaved((a0, a1), aggr_hammers_per_window, bank)]
    if dummies and dummy_hammers:
        ops.append(HammerMultiBank(dummies, dummy_hammers))
    ops.append(SyncToTrrRef())
    return AccessPattern(
        family="sampler_flood",
        bank=bank,
        aggressors=(a0, a1),
        dummies=dummies,
        ops=ops,
        window_refs=window_refs,
        params={
            "aggr_hammers_per_window": aggr_hammers_per_window,
            "window_refs": window_refs,
            "dummy_banks": dummy_banks,
            "dummy_hammers": dummy_hammers if dummies else 0,
        },
    ).check_budget(timing)


def gen_window_preload(a0: int, a1: int, preload_dummy_hammers: int, window_refs: int = 17,
                       bank: int = 0, rows_per_bank: int = 2048,
                       timing: TimingParams = TimingParams()) -> AccessPattern:
    """Per window: the preload spread over PRELOAD_DUMMIES dummies, then A0/A1 for the rest of the window.

    With 64 ACTs per dummy (the default aggressor threshold) every dummy qualifies as a
    potential aggressor and ranks ahead of A0/A1 in the window.
    """
    if preload_dummy_hammers < 0:
        raise InvalidConfigError("preload_dummy_hammers", "must be >= 0")
    budget = window_refs * timing.hammers_per_interval
    if preload_dummy_hammers > budget:
        raise BudgetExceededError(preload_dummy_hammers, budget, "window_preload dummy ACTs per window")
    rows = place_dummies((a0, a1), PRELOAD_DUMMIES, rows_per_bank)
    rounds, extra = divmod(preload_dummy_hammers, PRELOAD_DUMMIES)
    aggr = (budget - preload_dummy_hammers) // 2
    ops: List[PatternOp] = []
    if rounds:
        ops.append(HammerInterleaved(rows, rounds, bank))
    if extra:
        ops.append(HammerInterleaved(rows[:extra], 1, bank))
    ops += [HammerInterleaved((a0, a1), aggr, bank), SyncToTrrRef()]
    return AccessPattern(
        family="window_preload",
        bank=bank,
        aggressors=(a0, a1),
        dummies=[(bank, r) for r in rows],
        ops=ops,
        window_refs=window_refs,
        params={"preload_dummy_hammers": preload_dummy_hammers, "window_refs": window_refs, "aggr_hammers": aggr},
    ).check_budget(timing)


def plain_single_sided(a0: int, hammers: Optional[int] = None, bank: int = 0,
                       timing: TimingParams = TimingParams()) -> AccessPattern:
    hammers = timing.hammers_per_interval if hammers is None else hammers
    return AccessPattern(
        family="plain_single_sided",
        bank=bank,
        aggressors=(a0,),
        dummies=(),
        ops=[Hammer(a0, hammers, bank), SyncToRef()],
        params={"hammers": hammers},
    ).check_budget(timing)


def plain_double_sided(a0: int, a1: int, hammers: Optional[int] = None, bank: int = 0,
                       timing: TimingParams = TimingParams()) -> AccessPattern:
    hammers = timing.hammers_per_interval // 2 if hammers is None else hammers
    return AccessPattern(
        family="plain_double_sided",
        bank=bank,
        aggressors=(a0, a1),
        dummies=(),
        ops=[HammerInterleaved((a0, a1), hammers, bank), SyncToRef()],
        params={"hammers": hammers},
    ).check_budget(timing)


def pattern_for(config: DeviceConfig, family: str, victim: int, params: Optional[Mapping[str, Any]] = None,
                bank: int = 0) -> AccessPattern:
    """Pattern of ``family`` around ``victim`` (aggressors victim +- 1) sized for ``config``."""
    params = dict(params or {})
    params.pop("family", None)
    a0, a1 = victim - 1, victim + 1
    common = {"bank": bank, "timing": config.timing}
    rows = {"rows_per_bank": config.rows_per_bank}
    if family == "counter_evict":
        return gen_counter_evict(a0, a1, **params, **rows, **common)
    if family == "sampler_flood":
        return gen_sampler_flood(a0, a1, **params, banks=config.banks, **rows, **common)
    if family == "window_preload":
        params.setdefault("window_refs", config.trr.trr_ref_period)
        return gen_window_preload(a0, a1, **params, **rows, **common)
    if family == "plain_single_sided":
        return plain_single_sided(a1, **params, **common)
    if family == "plain_double_sided":
        return plain_double_sided(a0, a1, **params, **common)
    raise InvalidConfigError("family", f"unknown pattern family '{family}' (expected one of {FAMILIES})")


def default_params(config: DeviceConfig, family: str) -> Dict[str, Any]:
    """The catalog's tuned parameters when they belong to ``family``, else {}."""
    try:
        params = catalog_best_params(config.trr.label)
    except ConfigParseError:
        return {}
    return params if params.get("family") == family else {}


# Execution -------------------------------------------------------------------------------------

@attrs.frozen
class BitFlipReport:
    family: str
    params: Dict[str, Any]
    bank: int
    duration_refs: int
    rows_read: Tuple[int, ...]
    # (row, bit) of every flipped cell
    flips: Tuple[Tuple[int, int], ...]

    @property
    def total(self) -> int:
        return len(self.flips)

    @property
    def row_flips(self) -> Dict[int, int]:
        counts = {row: 0 for row in self.rows_read}
        for row, _ in self.flips:
            counts[row] += 1
        return counts

    @property
    def chunk_flips(self) -> Dict[Tuple[int, int], int]:
        counts: Dict[Tuple[int, int], int] = {}
        for row, bit in self.flips:
            key = (row, bit // CHUNK_BITS)
            counts[key] = counts.get(key, 0) + 1
        return counts

    def flips_in(self, row: int) -> int:
        return sum(1 for r, _ in self.flips if r == row)

    def to_record(self) -> dict:
        return {
            "family": self.family,
            "params": self.params,
            "bank": self.bank,
            "duration_refs": self.duration_refs,
            "total_flips": self.total,
            "row_flips": {str(r): n for r, n in self.row_flips.items() if n},
            "chunk_flips": [[r, c, n] for (r, c), n in sorted(self.chunk_flips.items())],
        }


class _IntervalRunner:
    """Packs hammer operations into refresh intervals, REFing at each deadline."""

    def __init__(self, device: DramDevice):
        self.device = device
        self.timing = device.timing
        self.interval_start = device.now

    @property
    def deadline(self) -> int:
        return self.interval_start + self.timing.ref_interval - self.timing.t_ref

    def room(self) -> int:
        return max(0, (self.deadline - self.device.now) // self.timing.act_cycle)

    def ref(self):
        now = self.device.now
        if now > self.deadline:
            raise TimingViolationError("tREFI", self.deadline, now)
        self.device.wait(self.deadline - now)
        self.device.ref()
        self.interval_start = self.deadline + self.timing.t_ref

    def _acts(self, count: int, issue):
        """Issue ``count`` ACT slots through ``issue(offset, n)`` across intervals."""
        done = 0
        while done < count:
            n = min(self.room(), count - done)
            if n == 0:
                self.ref()
                continue
            issue(done, n)
            done += n

    def run(self, op: PatternOp, window_refs: int):
        device = self.device
        if isinstance(op, Hammer):
            self._acts(op.count, lambda _, n: device.hammer(op.bank, op.row, n))
        elif isinstance(op, HammerInterleaved):
            rows = list(op.rows)

            def issue(offset: int, n: int):
                i = offset % len(rows)
                head = min(n, (len(rows) - i) % len(rows))
                if head:
                    device.hammer_interleaved(op.bank, rows[i:i + head], 1)
                full, tail = divmod(n - head, len(rows))
                device.hammer_interleaved(op.bank, rows, full)
                if tail:
                    device.hammer_interleaved(op.bank, rows[:tail], 1)

            self._acts(op.count * len(rows), issue)
        elif isinstance(op, HammerMultiBank):
            self._acts(op.count, lambda _, n: device.hammer_multi_bank(list(op.rows), n))
        elif isinstance(op, SyncToRef):
            self.ref()
        elif isinstance(op, SyncToTrrRef):
            self.ref()
            while device.ref_count % window_refs:
                self.ref()


def execute(device: DramDevice, pattern: AccessPattern, duration_refs: int) -> BitFlipReport:
    """Run ``pattern`` for ``duration_refs`` REFs and read back the rows around the aggressors.

    Only rows within two rows of an aggressor are written and read: ACTs disturb no row
    further away, so dummy rows and the rest of the bank cannot flip. Retention failures
    elsewhere in the bank are not part of the report.
    """
    pattern.check_budget(device.timing)
    bank = pattern.bank
    victims = pattern.victim_rows(device.config.rows_per_bank)
    for row in victims:
        device.write_row(bank, row, ALL_ONES)

    runner = _IntervalRunner(device)
    while device.ref_count % pattern.window_refs:
        runner.ref()
    start = device.ref_count
    for op in pattern.prologue:
        runner.run(op, pattern.window_refs)
    while device.ref_count - start < duration_refs:
        for op in pattern.ops:
            runner.run(op, pattern.window_refs)

    flips = []
    for row in victims:
        data = device.read_row(bank, row)
        flips.extend((row, bit) for bit in sorted(data.flips))
    report = BitFlipReport(
        family=pattern.family,
        params=dict(pattern.params),
        bank=bank,
        duration_refs=device.ref_count - start,
        rows_read=tuple(victims),
        flips=tuple(flips),
    )
    logger.debug(
        f"{pattern.family} around {list(pattern.aggressors)}: {report.total} flips in {report.duration_refs} REFs"
    )
    return report


# Sweeps and scans ------------------------------------------------------------------------------

def attack_refs(config: DeviceConfig, periods: int) -> int:
    return periods * config.regular_refresh.period


def victim_positions(config: DeviceConfig, count: int) -> List[int]:
    """``count`` victim rows spread across the bank, clear of the edges."""
    lo, hi = 3, config.rows_per_bank - 4
    if count <= 0:
        return []
    rows = {int(v) for v in np.linspace(lo, hi, count)}
    if config.disturbance.paired_rows:
        # only the even row of a pair is disturbed (by its odd partner)
        rows = {v - v % 2 for v in rows}
    return sorted(rows)


def bank_positions(config: DeviceConfig, stride: int = SCAN_STRIDE) -> List[int]:
    """Every ``stride``-th victim row of the bank, clear of the edges; stride 1 covers the whole bank."""
    if stride < 1:
        raise InvalidConfigError("stride", "must be >= 1")
    step = stride
    if config.disturbance.paired_rows:
        # odd rows are never disturbed
        step = stride + stride % 2
    return list(range(4 if config.disturbance.paired_rows else 3, config.rows_per_bank - 3, step))


def _execute_at(task: Tuple[DeviceConfig, str, int, Dict[str, Any], int]) -> int:
    config, family, victim, params, duration_refs = task
    device = new_device(config)
    report = execute(device, pattern_for(config, family, victim, params), duration_refs)
    return report.flips_in(victim)


def _map(tasks: List[tuple], processes: Optional[int]) -> List[int]:
    if processes and processes > 1 and len(tasks) > 1:
        with Pool(processes) as pool:
            return pool.map(_execute_at, tasks)
    return [_execute_at(t) for t in tasks]


@attrs.frozen
class SweepPoint:
    hammers: int
    median: float
    q1: float
    q3: float
    row_flips: Tuple[int, ...]

    def to_record(self) -> dict:
        return {"hammers": self.hammers, "median": self.median, "q1": self.q1, "q3": self.q3,
                "row_flips": list(self.row_flips)}


def sweep_params(config: DeviceConfig, family: str, hammers: int) -> Dict[str, Any]:
    """Parameters of ``family`` with its primary hammer knob set to ``hammers``."""
    base = default_params(config, family)
    base.pop("family", None)
    budget = config.timing.hammers_per_interval
    if family == "counter_evict":
        dummies = base.get("dummies", 16)
        return {"aggr_hammers": hammers, "dummies": dummies,
                "dummy_hammers": max(0, (budget - 2 * hammers) // dummies)}
    if family == "sampler_flood":
        return {**base, "aggr_hammers_per_window": hammers}
    if family == "window_preload":
        return {**base, "preload_dummy_hammers": hammers}
    return {"hammers": hammers}


def sweep_hammers(device: DramDevice, family: str, hammer_range: Iterable[int], victims: int = 8,
                  periods: int = 2, processes: Optional[int] = None) -> List[SweepPoint]:
    """Per hammer setting, the distribution of flips in the victim row over ``victims`` positions."""
    config = device.config
    positions = victim_positions(config, victims)
    duration = attack_refs(config, periods)
    curve = []
    for hammers in hammer_range:
        params = sweep_params(config, family, hammers)
        flips = _map([(config, family, v, params, duration) for v in positions], processes)
        q1, median, q3 = (float(x) for x in np.percentile(flips, [25, 50, 75]))
        curve.append(SweepPoint(hammers, median, q1, q3, tuple(flips)))
        logger.info(f"Sweep {family} @ {hammers}: median {median} flips/row (q1 {q1}, q3 {q3})")
    return curve


def write_sweep_csv(curve: Sequence[SweepPoint], path: Path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["hammers", "median", "q1", "q3"])
        for p in curve:
            writer.writerow([p.hammers, p.median, p.q1, p.q3])


def scan_positions(device: DramDevice, family: str, params: Optional[Mapping[str, Any]] = None,
                   positions: Optional[Sequence[int]] = None, periods: int = 2,
                   processes: Optional[int] = None, stride: int = SCAN_STRIDE) -> Dict[int, int]:
    """{victim row: flips in that row} with the aggressor pair slid across the bank.

    Without explicit ``positions`` every ``stride``-th row of the bank is a victim.
    """
    config = device.config
    positions = list(positions) if positions is not None else bank_positions(config, stride)
    params = dict(params) if params is not None else default_params(config, family)
    duration = attack_refs(config, periods)
    flips = _map([(config, family, v, params, duration) for v in positions], processes)
    return dict(zip(positions, flips))


def vulnerability_scan(device: DramDevice, family: str, best_params: Optional[Mapping[str, Any]] = None,
                       positions: Optional[Sequence[int]] = None, periods: int = 2,
                       processes: Optional[int] = None, stride: int = SCAN_STRIDE) -> float:
    """Percentage of victim positions with at least one flip."""
    flips = scan_positions(device, family, best_params, positions, periods, processes, stride)
    if not flips:
        return 0.0
    percent = 100.0 * sum(1 for n in flips.values() if n) / len(flips)
    logger.info(f"Vulnerability scan {family} on {device.config.name}: {percent:.1f}% of {len(flips)} rows")
    return percent
