"""Ground-truth TRR mechanisms.

A mechanism observes every ACT (``on_activate`` / ``on_activate_cycle``) and is
consulted on every REF (``on_ref``). It returns :class:`TrrAction` records naming
the victim rows it refreshes; the device applies them. Rows here are physical.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from collections import deque
from typing import Dict, List, Optional, Sequence, Tuple

import attrs

from trrsim.config import TrrMechanismConfig
from trrsim.rng import DeterministicRNG, derive_seed

logger = logging.getLogger(__name__)

Activation = Tuple[int, int]  # (bank, physical row)


@attrs.frozen
class TrrAction:
    ref_index: int
    bank: int
    aggressor: int
    victims: Tuple[int, ...]
    kind: str


class TrrMechanism(ABC):
    def __init__(self, config: TrrMechanismConfig, banks: int, seed: int):
        self.config = config
        self.banks = banks
        self.seed = seed
        self.reset()

    @abstractmethod
    def reset(self):
        """Return to the post-construction state."""

    @abstractmethod
    def on_activate(self, bank: int, row: int):
        pass

    def on_activate_cycle(self, acts: Sequence[Activation], rounds: int):
        """Equivalent to calling on_activate for ``acts`` repeated ``rounds`` times."""
        for _ in range(rounds):
            for bank, row in acts:
                self.on_activate(bank, row)

    @abstractmethod
    def on_ref(self, ref_index: int) -> List[TrrAction]:
        pass

    def is_trr_capable(self, ref_index: int) -> bool:
        return (ref_index + 1) % self.config.trr_ref_period == 0

    def neighbors(self, row: int) -> Tuple[int, ...]:
        span = self.config.neighbor_span
        if span == "pair":
            return (row ^ 1,)
        return tuple(row + offset for offset in span)

    def _action(self, ref_index: int, bank: int, row: int, kind: str) -> TrrAction:
        return TrrAction(ref_index, bank, row, self.neighbors(row), kind)


class NoTrr(TrrMechanism):
    def reset(self):
        pass

    def on_activate(self, bank, row):
        pass

    def on_activate_cycle(self, acts, rounds):
        pass

    def on_ref(self, ref_index):
        return []


# Counter-based ---------------------------------------------------------------------------------

class _Entry:
    __slots__ = ("key", "count", "seq")

    def __init__(self, key, count, seq):
        self.key = key
        self.count = count
        self.seq = seq


class CounterTable:
    """Fixed-slot activation counter table with min-counter (or FIFO) eviction."""

    def __init__(self, size: int, evict_policy: str):
        self.size = size
        self.evict_policy = evict_policy
        self.slots: List[Optional[_Entry]] = [None] * size
        self.index: Dict[Activation, int] = {}
        self.pointer = 0
        self._seq = 0

    def __contains__(self, key) -> bool:
        return key in self.index

    def touch(self, key: Activation, n: int = 1):
        slot = self.index.get(key)
        if slot is not None:
            self.slots[slot].count += n
            return
        slot = self._free_slot()
        if slot is None:
            slot = self._victim_slot()
            del self.index[self.slots[slot].key]
        self._seq += 1
        self.slots[slot] = _Entry(key, n, self._seq)
        self.index[key] = slot

    def _free_slot(self) -> Optional[int]:
        if len(self.index) == self.size:
            return None
        return self.slots.index(None)

    def _victim_slot(self) -> int:
        if self.evict_policy == "fifo":
            return min(range(self.size), key=lambda i: self.slots[i].seq)
        return min(range(self.size), key=lambda i: (self.slots[i].count, self.slots[i].seq))

    def max_entry_slot(self) -> Optional[int]:
        best = None
        for i, e in enumerate(self.slots):
            if e is None or e.count <= 0:
                continue
            if best is None or (e.count, -e.seq) > (self.slots[best].count, -self.slots[best].seq):
                best = i
        return best

    def remove(self, slot: int):
        del self.index[self.slots[slot].key]
        self.slots[slot] = None

    def snapshot(self) -> Dict[Activation, int]:
        return {e.key: e.count for e in self.slots if e is not None}


class CounterTrr(TrrMechanism):
    """Counter table per bank (or shared); TREF_a and TREF_b alternate on capable REFs."""

    def reset(self):
        c = self.config.counter
        tables = 1 if not c.per_bank else self.banks
        self.tables = [CounterTable(c.table_size, c.evict_policy) for _ in range(tables)]
        self.capable_refs = 0

    def table(self, bank: int) -> CounterTable:
        return self.tables[bank if self.config.counter.per_bank else 0]

    def on_activate(self, bank, row):
        self.table(bank).touch((bank, row))

    def on_activate_cycle(self, acts, rounds):
        remaining = rounds
        while remaining:
            for bank, row in acts:
                self.table(bank).touch((bank, row))
            remaining -= 1
            if remaining and all((b, r) in self.table(b) for b, r in acts):
                # present entries are only incremented, so the rest is arithmetic
                for bank, row in acts:
                    self.table(bank).touch((bank, row), remaining)
                return

    def on_ref(self, ref_index):
        if not self.is_trr_capable(ref_index):
            return []
        c = self.config.counter
        use_b = c.trefb_enabled and self.capable_refs % 2 == 0
        self.capable_refs += 1
        actions = []
        for table in self.tables:
            if use_b:
                slot = table.pointer
                table.pointer = (table.pointer + 1) % table.size
                if table.slots[slot] is None:
                    continue
                kind, resets = "tref_b", c.trefb_resets
            else:
                slot = table.max_entry_slot()
                if slot is None:
                    continue
                kind, resets = "tref_a", c.reset_on_detect
            bank, row = table.slots[slot].key
            actions.append(self._action(ref_index, bank, row, kind))
            if c.clear_on_detect:
                table.remove(slot)
            elif resets:
                table.slots[slot].count = 0
        return actions

    def table_snapshot(self, bank: int) -> Dict[int, int]:
        """{row: counter} of the table serving ``bank`` restricted to that bank."""
        return {r: n for (b, r), n in self.table(bank).snapshot().items() if b == bank}


# Sampling-based --------------------------------------------------------------------------------

class _SampleStream:
    __slots__ = ("rng", "gap", "countdown", "slot", "run_row", "run_len")

    def __init__(self, rng: DeterministicRNG, gap: int, capacity: int):
        self.rng = rng
        self.gap = gap
        self.countdown = rng.randint(1, gap)
        self.slot: deque = deque(maxlen=capacity)
        self.run_row: Optional[int] = None
        self.run_len = 0

    def redraw(self):
        self.countdown = self.rng.randint(1, self.gap)


class SamplingTrr(TrrMechanism):
    """Samples the ACT stream at pseudo-random gaps and on long same-row runs.

    A free-running countdown samples at gaps drawn from [1, gap_factor * G].
    Independently, the ACT completing G consecutive ACTs to one row address in
    the stream is always sampled (G = sample_guarantee_window), so any run of G
    consecutive ACTs to one row is sampled at least once.
    """

    def reset(self):
        s = self.config.sampling
        streams = 1 if s.shared_across_banks else self.banks
        self.streams = [
            _SampleStream(DeterministicRNG(derive_seed(self.seed, "sampler", i)),
                          s.gap_factor * s.sample_guarantee_window, s.capacity)
            for i in range(streams)
        ]

    def _stream_id(self, bank: int) -> int:
        return 0 if self.config.sampling.shared_across_banks else bank

    def _same_row(self, stream: _SampleStream, seq: Sequence[Activation], total: int):
        """``total`` ACTs cycling over ``seq``, whose entries share one row address."""
        guarantee = self.config.sampling.sample_guarantee_window
        row = seq[0][1]
        run = stream.run_len if stream.run_row == row else 0
        pos = 0
        while True:
            step = min(stream.countdown, guarantee - run)
            if step > total - pos:
                break
            pos += step
            run += step
            stream.countdown -= step
            stream.slot.append(seq[(pos - 1) % len(seq)])
            if stream.countdown == 0:
                stream.redraw()
            if run == guarantee:
                run = 0
        stream.countdown -= total - pos
        stream.run_row = row
        stream.run_len = run + total - pos

    def on_activate(self, bank, row):
        self._same_row(self.streams[self._stream_id(bank)], [(bank, row)], 1)

    def on_activate_cycle(self, acts, rounds):
        by_stream: Dict[int, List[Activation]] = {}
        for act in acts:
            by_stream.setdefault(self._stream_id(act[0]), []).append(act)
        guarantee = self.config.sampling.sample_guarantee_window
        for sid, seq in by_stream.items():
            stream = self.streams[sid]
            if len({row for _, row in seq}) == 1:
                self._same_row(stream, seq, len(seq) * rounds)
                continue
            if len(seq) >= guarantee:
                for _ in range(rounds):
                    for act in seq:
                        self._same_row(stream, [act], 1)
                continue
            for act in seq:
                self._same_row(stream, [act], 1)
            # later rounds hold no same-row run as long as the guarantee
            total = len(seq) * (rounds - 1)
            pos = 0
            while stream.countdown <= total - pos:
                pos += stream.countdown
                stream.slot.append(seq[(pos - 1) % len(seq)])
                stream.redraw()
            stream.countdown -= total - pos
            if rounds > 1:
                tail = 0
                while seq[len(seq) - 1 - tail][1] == seq[-1][1]:
                    tail += 1
                stream.run_len = tail

    def on_ref(self, ref_index):
        if not self.is_trr_capable(ref_index):
            return []
        actions = []
        for stream in self.streams:
            for bank, row in stream.slot:
                actions.append(self._action(ref_index, bank, row, "sample"))
            if self.config.sampling.clear_on_trr:
                stream.slot.clear()
        return actions

    def sampled(self, bank: int) -> Tuple[Activation, ...]:
        return tuple(self.streams[self._stream_id(bank)].slot)


# Window-based ----------------------------------------------------------------------------------

class _Window:
    __slots__ = ("first", "counts", "filled", "since")

    def __init__(self):
        # row -> position of its first ACT; insertion order is first-ACT order
        self.first: Dict[int, int] = {}
        self.counts: Dict[int, int] = {}
        self.filled = 0
        self.since = 0

    def clear(self):
        self.first = {}
        self.counts = {}
        self.filled = 0


class WindowTrr(TrrMechanism):
    """Records rows first activated within the first window_size ACTs since the last clear.

    A recorded row keeps counting its ACTs until the window clears; rows with at
    least ``aggressor_threshold`` ACTs are the potential aggressors a TRR-capable
    REF picks from, earlier first activations being more likely.
    """

    def reset(self):
        self.windows = [_Window() for _ in range(self.banks)]
        self.rng = DeterministicRNG(derive_seed(self.seed, "window"))

    def on_activate(self, bank, row):
        window = self.windows[bank]
        if row in window.counts:
            window.counts[row] += 1
        elif window.filled < self.config.window.window_size:
            window.first[row] = window.filled
            window.counts[row] = 1
        window.filled = min(window.filled + 1, self.config.window.window_size)

    def on_activate_cycle(self, acts, rounds):
        by_bank: Dict[int, List[int]] = {}
        for bank, row in acts:
            by_bank.setdefault(bank, []).append(row)
        size = self.config.window.window_size
        for bank, seq in by_bank.items():
            for row in seq:
                self.on_activate(bank, row)
            if rounds <= 1:
                continue
            window = self.windows[bank]
            # rows left out in the first round stay out; the window was already full
            for row in set(seq):
                if row in window.counts:
                    window.counts[row] += (rounds - 1) * seq.count(row)
            window.filled = min(size, window.filled + (rounds - 1) * len(seq))

    def _weights(self, window: _Window, rows: List[int]) -> List[float]:
        w = self.config.window
        if w.early_bias == "uniform":
            return [1.0] * len(rows)
        if w.early_bias == "linear":
            return [float(w.window_size - window.first[row]) for row in rows]
        return [w.rank_decay ** rank for rank in range(len(rows))]

    def potential_aggressors(self, bank: int) -> List[int]:
        window = self.windows[bank]
        threshold = self.config.window.aggressor_threshold
        return [row for row in window.first if window.counts[row] >= threshold]

    def on_ref(self, ref_index):
        w = self.config.window
        k = self.config.trr_ref_period
        actions = []
        for bank, window in enumerate(self.windows):
            window.since += 1
            if window.since < k:
                continue
            rows = self.potential_aggressors(bank)
            if rows:
                row = rows[self.rng.weighted_index(self._weights(window, rows))]
                actions.append(self._action(ref_index, bank, row, "window"))
            elif w.defer_when_empty:
                # stay pending and start a fresh window
                window.clear()
                continue
            window.clear()
            window.since = 0
        return actions

    def window_rows(self, bank: int) -> Tuple[int, ...]:
        """Recorded rows in first-ACT order."""
        return tuple(self.windows[bank].first)

    def window_counts(self, bank: int) -> Dict[int, int]:
        return dict(self.windows[bank].counts)


_MECHANISMS = {
    "counter": CounterTrr,
    "sampling": SamplingTrr,
    "window": WindowTrr,
    "none": NoTrr,
}


def make_trr(config: TrrMechanismConfig, banks: int, seed: int) -> TrrMechanism:
    return _MECHANISMS[config.variant](config, banks, derive_seed(seed, "trr"))
