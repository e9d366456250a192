"""ECC evaluation of bit-flip distributions.

Extended Hamming SECDED over 64-bit datawords, chip-symbol codes (Chipkill
class) and Reed-Solomon codes over byte symbols. A 64-bit chunk's bits are
striped across chips ``symbol_bits`` bits at a time: bit b belongs to chip
b // symbol_bits.
"""
from __future__ import annotations

import logging
from collections import Counter
from functools import reduce
from operator import xor
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import attrs
from reedsolo import ReedSolomonError, RSCodec

from trrsim.attacks import CHUNK_BITS, BitFlipReport
from trrsim.errors import InvalidConfigError, OutOfRangeError

logger = logging.getLogger(__name__)

CORRECTED = "Corrected"
DETECTED = "DetectedUncorrectable"
SILENT = "SilentOrMiscorrected"
OUTCOMES = (CORRECTED, DETECTED, SILENT)

DATA_BITS = 64
# fixed dataword the SECDED and RS checks inject flips into
REFERENCE_DATA = 0x0123_4567_89AB_CDEF


# Hamming helpers ---------------------------------------------------------------------------------

def compute_m_n(k: int) -> Tuple[int, int]:
    m = 1
    while 2**m < m + k + 1:
        m += 1
    return m, m + k


def compute_syndrome_positions(m: int) -> List[int]:
    r = []
    i = 1
    while i <= m:
        r.append(i)
        i <<= 1
    return r


def compute_data_positions(m: int) -> List[int]:
    e = set(compute_syndrome_positions(m))
    return [i for i in range(1, m + 1) if i not in e]


def compute_cover_positions(m: int, p: int) -> List[int]:
    r = []
    i = p
    while i <= m:
        r.extend(i + j for j in range(min(p, m - i + 1)))
        i += 2 * p
    return r


_M, _N = compute_m_n(DATA_BITS)
_DATA_POS = compute_data_positions(_N)
_SYNDROME_POS = compute_syndrome_positions(_N)
_COVER = [compute_cover_positions(_N, p) for p in _SYNDROME_POS]
# codeword bit 0 is the overall parity, bits 1.._N the Hamming positions
CODEWORD_BITS = _N + 1


def _bit(word: int, pos: int) -> int:
    return (word >> pos) & 1


def _syndrome(word: int) -> int:
    return sum(reduce(xor, (_bit(word, c) for c in cover)) << i for i, cover in enumerate(_COVER))


def secded_encode(data: int) -> int:
    word = 0
    for i, pos in enumerate(_DATA_POS):
        word |= _bit(data, i) << pos
    for p, cover in zip(_SYNDROME_POS, _COVER):
        word |= reduce(xor, (_bit(word, c) for c in cover)) << p
    return word | (bin(word).count("1") & 1)


def secded_decode(word: int) -> Tuple[int, str]:
    """(corrected codeword, "ok" | "sec" | "ded")."""
    syndrome = _syndrome(word)
    parity = bin(word).count("1") & 1
    if syndrome == 0:
        return (word ^ 1, "sec") if parity else (word, "ok")
    if not parity:
        return word, "ded"
    # a syndrome past the last position names no bit; the word goes out uncorrected
    if syndrome <= _N:
        word ^= 1 << syndrome
    return word, "sec"


def secded_data(word: int) -> int:
    return sum(_bit(word, pos) << i for i, pos in enumerate(_DATA_POS))


def data_bit_position(bit: int) -> int:
    """Codeword position holding data bit ``bit``."""
    return _DATA_POS[bit]


# Codes -----------------------------------------------------------------------------------------

KINDS = ("secded_72_64", "symbol_code", "reed_solomon")


@attrs.frozen
class CodewordSpec:
    kind: str
    symbol_bits: int = 8
    correct_t: int = 1
    detect_d: int = 2
    parity_symbols: int = 0
    dataword_bits: int = DATA_BITS

    def __attrs_post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfigError("kind", f"unknown code '{self.kind}' (expected one of {KINDS})")
        if self.kind == "symbol_code" and not 0 <= self.correct_t <= self.detect_d:
            raise InvalidConfigError("correct_t", "must satisfy 0 <= correct_t <= detect_d")
        if self.kind != "secded_72_64" and (self.symbol_bits <= 0 or DATA_BITS % self.symbol_bits):
            raise InvalidConfigError("symbol_bits", f"must divide {DATA_BITS}")
        if self.kind == "reed_solomon" and (self.symbol_bits != 8 or self.parity_symbols < 0):
            raise InvalidConfigError("parity_symbols", "Reed-Solomon runs over bytes with >= 0 parity symbols")

    @property
    def name(self) -> str:
        if self.kind == "symbol_code":
            return f"symbol_code(x{self.symbol_bits},t={self.correct_t},d={self.detect_d})"
        if self.kind == "reed_solomon":
            return f"reed_solomon({self.parity_symbols})"
        return self.kind

    @property
    def codeword_bits(self) -> int:
        if self.kind == "secded_72_64":
            return CODEWORD_BITS
        return self.dataword_bits


def secded_72_64() -> CodewordSpec:
    return CodewordSpec("secded_72_64")


def symbol_code(symbol_bits: int = 8, correct_t: int = 1, detect_d: int = 2) -> CodewordSpec:
    return CodewordSpec("symbol_code", symbol_bits=symbol_bits, correct_t=correct_t, detect_d=detect_d)


def reed_solomon(parity_symbols: int, symbol_bits: int = 8) -> CodewordSpec:
    return CodewordSpec("reed_solomon", symbol_bits=symbol_bits, parity_symbols=parity_symbols)


def _classify_secded(positions: Sequence[int]) -> str:
    original = secded_encode(REFERENCE_DATA)
    corrupted = original
    for p in positions:
        corrupted ^= 1 << p
    corrected, status = secded_decode(corrupted)
    if status == "ded":
        return DETECTED
    return CORRECTED if corrected == original else SILENT


def _classify_rs(spec: CodewordSpec, positions: Sequence[int]) -> str:
    if not positions:
        return CORRECTED
    data = REFERENCE_DATA.to_bytes(DATA_BITS // 8, "little")
    if spec.parity_symbols == 0:
        return SILENT
    codec = RSCodec(spec.parity_symbols)
    encoded = bytearray(codec.encode(data))
    for p in positions:
        encoded[p // 8] ^= 1 << (p % 8)
    try:
        decoded = bytes(codec.decode(encoded)[0])
    except ReedSolomonError:
        return DETECTED
    return CORRECTED if decoded == data else SILENT


def classify(spec: CodewordSpec, flips_in_codeword: Iterable[int]) -> str:
    """Outcome of a codeword with the given bit positions flipped."""
    positions = sorted(set(flips_in_codeword))
    for p in positions:
        if not 0 <= p < spec.codeword_bits:
            raise OutOfRangeError("codeword bit", p, spec.codeword_bits)
    if spec.kind == "secded_72_64":
        return _classify_secded(positions)
    if spec.kind == "reed_solomon":
        return _classify_rs(spec, positions)
    symbols = len({p // spec.symbol_bits for p in positions})
    if symbols <= spec.correct_t:
        return CORRECTED
    if symbols <= spec.detect_d:
        return DETECTED
    return SILENT


# Distributions ---------------------------------------------------------------------------------

@attrs.frozen
class ChunkHistogram:
    """{flips in a 64-bit chunk: number of chunks}."""

    counts: Dict[int, int] = attrs.field(factory=dict)
    # data-bit positions of each flipped chunk when known
    chunks: Tuple[Tuple[int, ...], ...] = ()

    @property
    def total_flips(self) -> int:
        return sum(k * n for k, n in self.counts.items())

    @property
    def max_flips(self) -> int:
        return max(self.counts, default=0)

    def chunk_positions(self) -> List[Tuple[int, ...]]:
        """Flip positions per chunk; spread evenly across the chunk when not recorded."""
        if self.chunks:
            return list(self.chunks)
        out = []
        for flips, n in sorted(self.counts.items()):
            stride = max(1, DATA_BITS // flips)
            out.extend([tuple(j * stride for j in range(flips))] * n)
        return out

    def to_record(self) -> dict:
        return {"histogram": {str(k): n for k, n in sorted(self.counts.items())}, "y_scale": "log"}


def chunk_histogram(report: BitFlipReport) -> ChunkHistogram:
    per_chunk: Dict[Tuple[int, int], List[int]] = {}
    for row, bit in report.flips:
        per_chunk.setdefault((row, bit // CHUNK_BITS), []).append(bit % CHUNK_BITS)
    counts = Counter(len(bits) for bits in per_chunk.values())
    chunks = tuple(tuple(sorted(per_chunk[key])) for key in sorted(per_chunk))
    return ChunkHistogram(dict(sorted(counts.items())), chunks)


def rs_parity_needed(max_symbol_errors: int, policy: str = "detect_all_correct_half") -> int:
    """Parity symbols for a code that detects ``max_symbol_errors`` (and corrects half)."""
    if max_symbol_errors < 0:
        raise InvalidConfigError("max_symbol_errors", "must be >= 0")
    if policy == "detect_all_correct_half":
        return max_symbol_errors
    if policy == "correct_all":
        return 2 * max_symbol_errors
    raise InvalidConfigError("policy", f"unknown policy '{policy}'")


def _codeword_positions(spec: CodewordSpec, data_bits: Sequence[int]) -> List[int]:
    if spec.kind == "secded_72_64":
        return [data_bit_position(b) for b in data_bits]
    return list(data_bits)


def ecc_impact_report(source: Union[ChunkHistogram, BitFlipReport],
                      specs: Sequence[CodewordSpec]) -> Dict[str, Dict[str, int]]:
    """{code name: {corrected, detected, silent}} over every flipped chunk."""
    histogram = chunk_histogram(source) if isinstance(source, BitFlipReport) else source
    chunks = histogram.chunk_positions()
    impact = {}
    for spec in specs:
        tally = Counter(classify(spec, _codeword_positions(spec, bits)) for bits in chunks)
        impact[spec.name] = {
            "corrected": tally[CORRECTED],
            "detected": tally[DETECTED],
            "silent": tally[SILENT],
        }
    logger.info(f"ECC impact over {len(chunks)} chunks: {impact}")
    return impact


def default_specs(pins: int = 8, max_symbol_errors: Optional[int] = None) -> List[CodewordSpec]:
    specs = [secded_72_64(), symbol_code(symbol_bits=pins)]
    if max_symbol_errors:
        specs.append(reed_solomon(rs_parity_needed(max_symbol_errors)))
    return specs
