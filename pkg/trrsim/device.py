"""Virtually clocked command-level DRAM device.

The device keeps per-row state lazily: a row that was never touched is in its
post-construction state ("just refreshed" at t=0). Regular refresh is applied
lazily too. REF ``n`` refreshes slot ``n mod P`` in every bank, and a row
catches up on the REFs it missed the next time it is touched, sensing its
cells at the time of each missed REF.

Retention and RowHammer failures are materialized whenever a row is sensed:
on ACT (which also restores the row), on regular or TRR refresh.
"""
from __future__ import annotations

import logging
from array import array
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple, Union

import attrs
import numpy as np

from trrsim.config import NS_PER_MS, DeviceConfig, Span
from trrsim.errors import OutOfRangeError, ProtocolViolationError
from trrsim.mapping import RowMap
from trrsim.rng import numpy_generator
from trrsim.timing import CommandTimer
from trrsim.trr import CounterTrr, SamplingTrr, TrrAction, TrrMechanism, WindowTrr, make_trr

logger = logging.getLogger(__name__)

ALL_ONES = 0xFFFF_FFFF_FFFF_FFFF
ALL_ZEROS = 0


# Commands --------------------------------------------------------------------------------------

@attrs.frozen
class Act:
    bank: int
    row: int


@attrs.frozen
class Pre:
    bank: int


@attrs.frozen
class Rd:
    bank: int
    row: int


@attrs.frozen
class Wr:
    bank: int
    row: int
    data: int = ALL_ONES


@attrs.frozen
class Ref:
    pass


@attrs.frozen
class Wait:
    ns: int


DramCommand = Union[Act, Pre, Rd, Wr, Ref, Wait]


@attrs.frozen
class RowData:
    """Row contents: a repeated 64-bit pattern word with a set of inverted bits."""

    pattern: int
    flips: FrozenSet[int]
    bits: int

    @property
    def flip_count(self) -> int:
        return len(self.flips)

    @property
    def intact(self) -> bool:
        return not self.flips


@attrs.frozen
class CommandResult:
    time_ns: int
    data: Optional[RowData] = None
    actions: Tuple[TrrAction, ...] = ()


@attrs.frozen
class TrrProfileGroundTruth:
    variant: str
    label: str
    ratio: int
    neighbors: Span
    capacity: Optional[int]
    per_bank: Optional[bool]
    window_size: Optional[int]
    sample_guarantee: Optional[int]
    evict_policy: Optional[str]
    reset_on_detect: Optional[bool]
    regular_refresh_period: int
    rows_per_ref: int


# Row state and cell tables ---------------------------------------------------------------------

class RowState:
    __slots__ = ("last_refresh", "ref_index", "lo", "hi", "far", "pattern", "flips")

    def __init__(self):
        self.last_refresh = 0
        self.ref_index = 0
        self.lo = 0
        self.hi = 0
        self.far = 0
        self.pattern = ALL_ZEROS
        self.flips: Set[int] = set()


# (bit, retention_ns, alternate_retention_ns or None)
WeakCell = Tuple[int, int, Optional[int]]


@attrs.define
class CellTable:
    """Special cells of one bank, keyed by physical row. All other cells are ideal."""

    weak: Dict[int, List[WeakCell]]
    vulnerable: Dict[int, Tuple[Tuple[int, ...], Tuple[float, ...]]]
    min_threshold: np.ndarray

    def weak_rows(self) -> Set[int]:
        return set(self.weak)

    def vrt_rows(self) -> Set[int]:
        return {row for row, cells in self.weak.items() if any(alt is not None for _, _, alt in cells)}

    def retention_ns(self, row: int) -> Optional[int]:
        cells = self.weak.get(row)
        if not cells:
            return None
        return min(ret for _, ret, _ in cells)


def _draw_cells(config: DeviceConfig, bank: int) -> CellTable:
    r = config.retention
    d = config.disturbance
    n = config.physical_rows
    gen = numpy_generator(config.seed, "cells", bank)

    q = r.retention_quantum_ms
    lo_q = -(-r.weak_retention_min_ms // q)
    hi_q = max(lo_q, r.weak_retention_max_ms // q)
    weak_mask = gen.random(n) < r.weak_row_fraction
    vrt_mask = gen.random(n) < r.vrt_row_fraction
    weak_counts = gen.integers(r.weak_cells_per_weak_row[0], r.weak_cells_per_weak_row[1] + 1, size=n)
    weak: Dict[int, List[WeakCell]] = {}
    for row in np.flatnonzero(weak_mask):
        k = int(weak_counts[row])
        bits = gen.choice(config.row_bits, size=k, replace=False)
        steps = gen.integers(lo_q, hi_q + 1, size=k)
        vrt = bool(vrt_mask[row])
        weak[int(row)] = [
            (int(b), int(s) * q * NS_PER_MS, (int(s) * q + 2 * q) * NS_PER_MS if vrt else None)
            for b, s in zip(bits, steps)
        ]

    vuln_counts = gen.integers(d.vulnerable_cells_per_row[0], d.vulnerable_cells_per_row[1] + 1, size=n)
    min_threshold = np.full(n, np.inf)
    vulnerable = {}
    for row in np.flatnonzero(vuln_counts):
        k = int(vuln_counts[row])
        bits = gen.choice(config.row_bits, size=k, replace=False)
        thresholds = d.hc_first * gen.uniform(1.0, d.per_cell_threshold_spread, size=k)
        vulnerable[int(row)] = (tuple(int(b) for b in bits), tuple(float(t) for t in thresholds))
        min_threshold[row] = thresholds.min()
    return CellTable(weak, vulnerable, min_threshold)


# Device ----------------------------------------------------------------------------------------

class DramDevice:
    def __init__(self, config: DeviceConfig, trace: bool = False):
        self.config = config.validate()
        self.timing = config.timing
        self.rowmap = RowMap(config)
        self.trr: TrrMechanism = make_trr(config.trr, config.banks, config.seed)
        self.timer = CommandTimer(config.timing, config.banks)
        self.now = 0
        self.ref_count = 0
        self.trace = trace
        self.trr_log: List[TrrAction] = []
        # (ref_index, bank, physical row) of every TRR-induced refresh
        self.refresh_log: List[Tuple[int, int, int]] = []

        self._ref_times = array("q")
        self._period = config.regular_refresh.period
        self._rows_per_ref = config.regular_refresh.rows_per_ref
        self._rows: List[Dict[int, RowState]] = [{} for _ in range(config.banks)]
        self._cells: List[Optional[CellTable]] = [None] * config.banks
        self._toggle_ns = config.retention.vrt_toggle_period_ms * NS_PER_MS
        self._ssf = config.disturbance.single_sided_factor
        self._d2f = config.disturbance.distance2_factor
        self._paired = config.disturbance.paired_rows
        logger.info(
            f"Device {config.name}: {config.banks} banks x {config.rows_per_bank} rows, "
            f"TRR {config.trr.label} ({config.trr.variant}), seed {config.seed}"
        )

    def __repr__(self):
        return f"<DramDevice {self.config.name} seed={self.config.seed} t={self.now}ns refs={self.ref_count}>"

    # Addressing ----------------------------------------------------------------------------------

    def _check_bank(self, bank: int):
        if not 0 <= bank < self.config.banks:
            raise OutOfRangeError("bank", bank, self.config.banks)

    def to_physical(self, bank: int, logical_row: int) -> int:
        self._check_bank(bank)
        return self.rowmap.to_physical(logical_row)

    def to_logical(self, bank: int, physical_row: int) -> int:
        self._check_bank(bank)
        return self.rowmap.to_logical(physical_row)

    # Cells ---------------------------------------------------------------------------------------

    def cell_table(self, bank: int) -> CellTable:
        self._check_bank(bank)
        table = self._cells[bank]
        if table is None:
            table = self._cells[bank] = _draw_cells(self.config, bank)
        return table

    def plant_weak_cell(self, bank: int, physical_row: int, bit: int, retention_ms: int,
                        alt_retention_ms: Optional[int] = None):
        """Add a weak cell to the table (test helper for crafted layouts)."""
        alt = alt_retention_ms * NS_PER_MS if alt_retention_ms is not None else None
        self.cell_table(bank).weak.setdefault(physical_row, []).append(
            (bit, retention_ms * NS_PER_MS, alt)
        )

    def clear_weak_cells(self, bank: int, rows: Iterable[int]):
        table = self.cell_table(bank)
        for row in rows:
            table.weak.pop(row, None)

    # Row state -----------------------------------------------------------------------------------

    def _row(self, bank: int, p: int) -> RowState:
        rows = self._rows[bank]
        st = rows.get(p)
        if st is None:
            st = rows[p] = RowState()
        if st.ref_index < self.ref_count:
            self._catch_up(bank, p, st)
        return st

    def _catch_up(self, bank: int, p: int, st: RowState):
        period = self._period
        slot = p // self._rows_per_ref
        first = st.ref_index + (slot - st.ref_index) % period
        for n in range(first, self.ref_count, period):
            self._refresh(bank, p, st, self._ref_times[n])
        st.ref_index = self.ref_count

    def _sense(self, bank: int, p: int, st: RowState, t: int):
        cells = self.cell_table(bank)
        weak = cells.weak.get(p)
        if weak:
            elapsed = t - st.last_refresh
            toggled = (t // self._toggle_ns) % 2 == 1
            for bit, ret, alt in weak:
                limit = alt if (alt is not None and toggled) else ret
                if elapsed > limit:
                    st.flips.add(bit)
        if st.lo or st.hi or st.far:
            lo, hi = st.lo, st.hi
            small = min(lo, hi)
            dose = small + (max(lo, hi) - small) / self._ssf + st.far / self._d2f
            if dose >= cells.min_threshold[p]:
                bits, thresholds = cells.vulnerable[p]
                for bit, threshold in zip(bits, thresholds):
                    if dose >= threshold:
                        st.flips.add(bit)

    def _refresh(self, bank: int, p: int, st: RowState, t: int):
        self._sense(bank, p, st, t)
        st.last_refresh = t
        st.lo = st.hi = st.far = 0

    def _targets(self, p: int) -> List[Tuple[int, int, int, int]]:
        """(victim, d_lo, d_hi, d_far) per ACT of physical row ``p``."""
        lo_b, hi_b = self.rowmap.region(p)
        if self._paired:
            q = p ^ 1
            if p & 1 and lo_b <= q < hi_b:
                return [(q, 1, 1, 0)]
            return []
        out = []
        if p - 1 >= lo_b:
            out.append((p - 1, 0, 1, 0))
        if p + 1 < hi_b:
            out.append((p + 1, 1, 0, 0))
        if p - 2 >= lo_b:
            out.append((p - 2, 0, 0, 1))
        if p + 2 < hi_b:
            out.append((p + 2, 0, 0, 1))
        return out

    def _activate(self, bank: int, p: int, t: int, targets=None):
        self._refresh(bank, p, self._row(bank, p), t)
        for q, a, b, c in targets if targets is not None else self._targets(p):
            st = self._row(bank, q)
            st.lo += a
            st.hi += b
            st.far += c

    def disturbance(self, bank: int, physical_row: int) -> Tuple[int, int, int]:
        """(lower-side, upper-side, distance-2) hammers since the row's last refresh."""
        st = self._row(bank, physical_row)
        return st.lo, st.hi, st.far

    # Commands ------------------------------------------------------------------------------------

    def issue(self, command: DramCommand) -> CommandResult:
        match command:
            case Act(bank, row):
                p = self.to_physical(bank, row)
                self.timer.check_act(bank, self.now)
                self.timer.record_act(bank, row, self.now)
                self._activate(bank, p, self.now)
                self.trr.on_activate(bank, p)
                return CommandResult(self.now)
            case Pre(bank):
                self._check_bank(bank)
                self.timer.check_pre(bank, self.now)
                self.timer.record_pre(bank, self.now)
                return CommandResult(self.now)
            case Rd(bank, row):
                p = self.to_physical(bank, row)
                self.timer.check_access(bank, row, "RD")
                st = self._row(bank, p)
                return CommandResult(self.now, data=RowData(st.pattern, frozenset(st.flips), self.config.row_bits))
            case Wr(bank, row, data):
                p = self.to_physical(bank, row)
                self.timer.check_access(bank, row, "WR")
                st = self._row(bank, p)
                st.pattern = data
                st.flips = set()
                return CommandResult(self.now)
            case Ref():
                return self._refresh_command()
            case Wait(ns):
                if ns < 0:
                    raise ProtocolViolationError(f"WAIT of negative duration {ns}ns")
                self.now += ns
                return CommandResult(self.now)
        raise ProtocolViolationError(f"unknown command {command!r}")

    def _refresh_command(self) -> CommandResult:
        self.timer.check_ref(self.now)
        n = self.ref_count
        self._ref_times.append(self.now)
        self.ref_count += 1
        applied = []
        for action in self.trr.on_ref(n):
            victims = self.rowmap.in_region(action.aggressor, action.victims)
            for q in victims:
                self._refresh(action.bank, q, self._row(action.bank, q), self.now)
                if self.trace:
                    self.refresh_log.append((n, action.bank, q))
            if victims != action.victims:
                action = attrs.evolve(action, victims=victims)
            applied.append(action)
        if self.trace:
            self.trr_log.extend(applied)
        start = self.now
        self.now += self.timing.t_ref
        return CommandResult(start, actions=tuple(applied))

    # Convenience sequences -----------------------------------------------------------------------

    def ref(self) -> Tuple[TrrAction, ...]:
        return self.issue(Ref()).actions

    def wait(self, ns: int):
        self.issue(Wait(ns))

    def write_row(self, bank: int, row: int, pattern: int = ALL_ONES):
        t = self.timing
        self.issue(Act(bank, row))
        self.issue(Wait(t.t_act_to_pre))
        self.issue(Wr(bank, row, pattern))
        self.issue(Pre(bank))
        self.issue(Wait(t.t_pre_to_act))

    def read_row(self, bank: int, row: int) -> RowData:
        t = self.timing
        self.issue(Act(bank, row))
        self.issue(Wait(t.t_act_to_pre))
        data = self.issue(Rd(bank, row)).data
        self.issue(Pre(bank))
        self.issue(Wait(t.t_pre_to_act))
        return data

    # Bulk hammering ------------------------------------------------------------------------------

    def hammer(self, bank: int, row: int, count: int):
        self.hammer_interleaved(bank, [row], count)

    def hammer_interleaved(self, bank: int, rows: Sequence[int], rounds: int):
        """``rounds`` times ACT/WAIT tRAS/PRE/WAIT tRP over ``rows`` in order.

        Exactly equivalent to issuing the individual commands.
        """
        if rounds <= 0 or not rows:
            return
        phys = [self.to_physical(bank, r) for r in rows]
        if len(set(phys)) != len(phys):
            raise ProtocolViolationError("interleaved hammer rows must be distinct")
        self.timer.check_act(bank, self.now)
        self._burst(bank, phys, rounds, self.now)
        self.trr.on_activate_cycle([(bank, p) for p in phys], rounds)
        self.now += rounds * len(phys) * self.timing.act_cycle

    def hammer_multi_bank(self, entries: Sequence[Tuple[int, int]], rounds: int):
        """Hammer one row in each of up to four banks, their ACTs issued together."""
        if rounds <= 0 or not entries:
            return
        banks = [bank for bank, _ in entries]
        if len(set(banks)) != len(banks):
            raise ProtocolViolationError("multi-bank hammer needs distinct banks")
        phys = [(bank, self.to_physical(bank, row)) for bank, row in entries]
        for bank in banks:
            self.timer.check_bank(bank, self.now)
        self.timer.check_faw_slot(self.now, len(entries))
        for bank, p in phys:
            self._burst(bank, [p], rounds, self.now)
        self.trr.on_activate_cycle(phys, rounds)
        self.now += rounds * self.timing.act_cycle

    def _burst(self, bank: int, phys: List[int], rounds: int, t0: int):
        step = self.timing.act_cycle
        size = len(phys)
        targets = [self._targets(p) for p in phys]
        for j, p in enumerate(phys):
            self._activate(bank, p, t0 + j * step, targets[j])

        if rounds > 1:
            rows = self._rows[bank]
            position = {p: j for j, p in enumerate(phys)}
            per_round: Dict[int, List[int]] = {}
            for tg in targets:
                for q, a, b, c in tg:
                    acc = per_round.setdefault(q, [0, 0, 0])
                    acc[0] += a
                    acc[1] += b
                    acc[2] += c
            # later rounds see a constant one-round dose at every ACT
            last_round = t0 + (rounds - 1) * size * step
            for j, p in enumerate(phys):
                st = rows[p]
                st.lo, st.hi, st.far = per_round.get(p, (0, 0, 0))
                self._sense(bank, p, st, t0 + (size + j) * step)
                st.lo = st.hi = st.far = 0
                st.last_refresh = last_round + j * step
            for j, tg in enumerate(targets):
                for q, a, b, c in tg:
                    i = position.get(q)
                    if i is not None and i < j:
                        st = rows[q]
                        st.lo += a
                        st.hi += b
                        st.far += c
            extra = rounds - 1
            for q, (a, b, c) in per_round.items():
                if q in position:
                    continue
                st = self._row(bank, q)
                st.lo += extra * a
                st.hi += extra * b
                st.far += extra * c

        last_act = t0 + (rounds * size - 1) * step
        self.timer.record_burst(bank, last_act, last_act + self.timing.t_act_to_pre, [last_act])

    # Ground truth (tests and acceptance only) ----------------------------------------------------

    def regular_refresh_slot(self, physical_row: int) -> int:
        return physical_row // self._rows_per_ref

    def regular_refresh_refs(self, physical_row: int, start: int, end: int) -> List[int]:
        """REF indices in [start, end) whose regular refresh covers ``physical_row``."""
        slot = self.regular_refresh_slot(physical_row)
        first = start + (slot - start) % self._period
        return list(range(first, end, self._period))

    def ground_truth(self) -> TrrProfileGroundTruth:
        t = self.config.trr
        capacity = per_bank = window_size = guarantee = policy = resets = None
        if t.variant == "counter":
            capacity, per_bank = t.counter.table_size, t.counter.per_bank
            policy, resets = t.counter.evict_policy, t.counter.reset_on_detect
        elif t.variant == "sampling":
            capacity, per_bank = t.sampling.capacity, not t.sampling.shared_across_banks
            guarantee = t.sampling.sample_guarantee_window
        elif t.variant == "window":
            per_bank, window_size = True, t.window.window_size
        return TrrProfileGroundTruth(
            variant=t.variant,
            label=t.label,
            ratio=t.trr_ref_period,
            neighbors=t.neighbor_span,
            capacity=capacity,
            per_bank=per_bank,
            window_size=window_size,
            sample_guarantee=guarantee,
            evict_policy=policy,
            reset_on_detect=resets,
            regular_refresh_period=self._period,
            rows_per_ref=self._rows_per_ref,
        )

    def counter_table(self, bank: int) -> Dict[int, int]:
        if not isinstance(self.trr, CounterTrr):
            return {}
        return self.trr.table_snapshot(bank)

    def sampled_rows(self, bank: int) -> Tuple[Tuple[int, int], ...]:
        if not isinstance(self.trr, SamplingTrr):
            return ()
        return self.trr.sampled(bank)

    def window_rows(self, bank: int) -> Tuple[int, ...]:
        if not isinstance(self.trr, WindowTrr):
            return ()
        return self.trr.window_rows(bank)

    def fresh_copy(self) -> "DramDevice":
        return DramDevice(self.config, trace=self.trace)


def new_device(config: DeviceConfig, trace: bool = False) -> DramDevice:
    return DramDevice(config, trace=trace)
