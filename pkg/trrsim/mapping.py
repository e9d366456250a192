"""Logical to physical row translation within a bank.

Every bank shares one mapping. Physical rows ``[rows_per_bank, rows_per_bank +
spare_rows)`` form the spare region that repaired rows are routed to; physical
adjacency never crosses the boundary between the main array and the spares.
"""
import logging
from typing import Dict, Iterable, Tuple

from trrsim.config import DeviceConfig
from trrsim.errors import OutOfRangeError

logger = logging.getLogger(__name__)


class RowMap:
    def __init__(self, config: DeviceConfig):
        m = config.mapping
        self.rows = config.rows_per_bank
        self.spare_rows = m.spare_rows
        self.scheme = m.scheme
        self.xor_mask = m.xor_mask
        self.block_size = m.block_size
        self._remapped: Dict[int, int] = dict(m.remapped_rows)
        self._spare_owner: Dict[int, int] = {spare: row for row, spare in m.remapped_rows}
        # physical rows whose logical owner moved to the spare region
        self._orphans = {self._scheme(row) for row in self._remapped}

    @property
    def physical_rows(self) -> int:
        return self.rows + self.spare_rows

    def _scheme(self, row: int) -> int:
        # every scheme is an involution, so the same function inverts it
        if self.scheme == "xor_scramble":
            return row ^ self.xor_mask
        if self.scheme == "block_reverse":
            base = row - row % self.block_size
            return base + self.block_size - 1 - (row - base)
        return row

    def to_physical(self, logical: int) -> int:
        if not 0 <= logical < self.rows:
            raise OutOfRangeError("logical row", logical, self.rows)
        spare = self._remapped.get(logical)
        if spare is not None:
            return spare
        return self._scheme(logical)

    def to_logical(self, physical: int) -> int:
        if not 0 <= physical < self.physical_rows:
            raise OutOfRangeError("physical row", physical, self.physical_rows)
        if physical >= self.rows:
            if physical not in self._spare_owner:
                raise OutOfRangeError("unused spare row", physical, self.physical_rows)
            return self._spare_owner[physical]
        if physical in self._orphans:
            raise OutOfRangeError("repaired physical row", physical, self.physical_rows)
        return self._scheme(physical)

    def region(self, physical: int) -> Tuple[int, int]:
        """Bounds [lo, hi) of the array region that holds ``physical``."""
        if physical >= self.rows:
            return self.rows, self.physical_rows
        return 0, self.rows

    def in_region(self, physical: int, candidates: Iterable[int]) -> Tuple[int, ...]:
        lo, hi = self.region(physical)
        return tuple(q for q in candidates if lo <= q < hi)
