"""Per-bank command legality: open rows, tRAS, tRP and the four-activation window."""
import logging
from collections import deque
from typing import List, Optional

from trrsim.config import TimingParams
from trrsim.errors import ProtocolViolationError, TimingViolationError

logger = logging.getLogger(__name__)

_NEVER = -(10**18)


class CommandTimer:
    def __init__(self, timing: TimingParams, banks: int):
        self.timing = timing
        self.banks = banks
        self.open_row: List[Optional[int]] = [None] * banks
        self._act_time = [_NEVER] * banks
        self._pre_time = [_NEVER] * banks
        self._faw = deque(maxlen=timing.max_acts_in_window)

    def _violation(self, constraint: str, earliest: int, now: int):
        logger.warning(f"Timing violation: {constraint} at {now}ns, earliest legal {earliest}ns")
        raise TimingViolationError(constraint, earliest, now)

    def _protocol(self, message: str):
        logger.warning(f"Protocol violation: {message}")
        raise ProtocolViolationError(message)

    def check_bank(self, bank: int, now: int):
        if self.open_row[bank] is not None:
            self._protocol(f"ACT to bank {bank} while row {self.open_row[bank]} is open")
        earliest = self._pre_time[bank] + self.timing.t_pre_to_act
        if now < earliest:
            self._violation("tRP", earliest, now)

    def check_act(self, bank: int, now: int):
        self.check_bank(bank, now)
        self.check_faw_slot(now, 1)

    def record_act(self, bank: int, row: int, now: int):
        self.open_row[bank] = row
        self._act_time[bank] = now
        self._faw.append(now)

    def check_pre(self, bank: int, now: int):
        if self.open_row[bank] is None:
            return
        earliest = self._act_time[bank] + self.timing.t_act_to_pre
        if now < earliest:
            self._violation("tRAS", earliest, now)

    def record_pre(self, bank: int, now: int):
        if self.open_row[bank] is not None:
            self.open_row[bank] = None
            self._pre_time[bank] = now

    def check_access(self, bank: int, row: int, verb: str):
        if self.open_row[bank] != row:
            self._protocol(f"{verb} to bank {bank} row {row} but open row is {self.open_row[bank]}")

    def check_ref(self, now: int):
        for bank, row in enumerate(self.open_row):
            if row is not None:
                self._protocol(f"REF while bank {bank} has row {row} open")
        earliest = max(self._pre_time) + self.timing.t_pre_to_act
        if now < earliest:
            self._violation("tRP", earliest, now)

    def record_burst(self, bank: int, last_act: int, last_pre: int, act_times):
        """Account for a burst of back-to-back ACT/PRE cycles that ended closed."""
        self._act_time[bank] = last_act
        self._pre_time[bank] = last_pre
        for t in act_times:
            self._faw.append(t)

    def check_faw_slot(self, now: int, acts: int):
        """``acts`` ACTs issued together at ``now`` must fit the four-activation window."""
        t = self.timing
        recent = [x for x in self._faw if now - x < t.t_faw_window]
        if len(recent) + acts > t.max_acts_in_window:
            if acts > t.max_acts_in_window:
                self._violation("tFAW", now + t.t_faw_window, now)
            self._violation("tFAW", recent[len(recent) + acts - t.max_acts_in_window - 1] + t.t_faw_window, now)
