from itertools import combinations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trrsim.attacks import BitFlipReport
from trrsim.ecc import (
    CODEWORD_BITS,
    CORRECTED,
    DETECTED,
    SILENT,
    ChunkHistogram,
    CodewordSpec,
    chunk_histogram,
    classify,
    default_specs,
    ecc_impact_report,
    reed_solomon,
    rs_parity_needed,
    secded_72_64,
    secded_data,
    secded_decode,
    secded_encode,
    symbol_code,
)
from trrsim.errors import InvalidConfigError, OutOfRangeError

SECDED = secded_72_64()


def _report(flips):
    rows = tuple(sorted({r for r, _ in flips}))
    return BitFlipReport("counter_evict", {}, 0, 0, rows, tuple(flips))


def test_codeword_is_72_bits():
    assert CODEWORD_BITS == 72
    assert SECDED.codeword_bits == 72


@settings(max_examples=25)
@given(st.integers(0, 2**64 - 1))
def test_secded_corrects_every_single_flip(data):
    word = secded_encode(data)
    for pos in range(CODEWORD_BITS):
        corrected, status = secded_decode(word ^ (1 << pos))
        assert status == "sec"
        assert corrected == word
        assert secded_data(corrected) == data


def test_secded_detects_double_flips():
    for a, b in combinations(range(0, CODEWORD_BITS, 5), 2):
        assert classify(SECDED, [a, b]) == DETECTED


@given(st.sets(st.integers(0, CODEWORD_BITS - 1), min_size=3, max_size=3))
def test_secded_never_corrects_three_flips(positions):
    assert classify(SECDED, positions) != CORRECTED


def test_secded_clean_word():
    assert classify(SECDED, []) == CORRECTED
    word = secded_encode(0xDEAD_BEEF)
    assert secded_decode(word) == (word, "ok")


def test_out_of_range_position():
    with pytest.raises(OutOfRangeError):
        classify(SECDED, [72])
    with pytest.raises(OutOfRangeError):
        classify(symbol_code(), [64])


def test_symbol_code_counts_chips():
    x8 = symbol_code(8, 1, 2)
    assert classify(x8, range(8)) == CORRECTED
    assert classify(x8, [0, 8]) == DETECTED
    assert classify(x8, [0, 8, 16]) == SILENT
    x4 = symbol_code(4, 1, 2)
    assert classify(x4, [0, 4]) == DETECTED


def test_reed_solomon_over_bytes():
    assert classify(reed_solomon(2), [3, 5]) == CORRECTED
    assert classify(reed_solomon(0), [3]) == SILENT
    assert classify(reed_solomon(14), [j * 9 for j in range(7)]) == CORRECTED


@pytest.mark.parametrize("kwargs", [
    {"kind": "hamming"},
    {"kind": "symbol_code", "symbol_bits": 7},
    {"kind": "symbol_code", "correct_t": 3, "detect_d": 2},
    {"kind": "reed_solomon", "symbol_bits": 4},
    {"kind": "reed_solomon", "parity_symbols": -1},
])
def test_invalid_specs(kwargs):
    with pytest.raises(InvalidConfigError):
        CodewordSpec(**kwargs)


def test_spec_names():
    assert [s.name for s in default_specs(max_symbol_errors=7)] == [
        "secded_72_64", "symbol_code(x8,t=1,d=2)", "reed_solomon(7)",
    ]
    assert len(default_specs()) == 2


def test_seven_flip_chunk_is_silent():
    histogram = ChunkHistogram({7: 1})
    impact = ecc_impact_report(histogram, [SECDED, symbol_code(8)])
    assert impact["secded_72_64"] == {"corrected": 0, "detected": 0, "silent": 1}
    assert impact["symbol_code(x8,t=1,d=2)"]["silent"] == 1
    assert rs_parity_needed(histogram.max_flips) == 7


def test_rs_parity_policies():
    assert rs_parity_needed(3) == 3
    assert rs_parity_needed(3, "correct_all") == 6
    with pytest.raises(InvalidConfigError):
        rs_parity_needed(3, "detect_half")
    with pytest.raises(InvalidConfigError):
        rs_parity_needed(-1)


def test_histogram_from_report():
    report = _report([(10, 1), (10, 2), (10, 70), (11, 5)])
    histogram = chunk_histogram(report)
    assert histogram.counts == {1: 2, 2: 1}
    assert histogram.chunks == ((1, 2), (6,), (5,))
    assert histogram.to_record() == {"histogram": {"1": 2, "2": 1}, "y_scale": "log"}


@given(st.sets(st.tuples(st.integers(0, 7), st.integers(0, 1023)), max_size=200))
def test_histogram_conserves_flips(flips):
    report = _report(sorted(flips))
    histogram = chunk_histogram(report)
    assert histogram.total_flips == len(flips)
    assert sum(histogram.counts.values()) == len({(r, b // 64) for r, b in flips})


def test_impact_covers_every_chunk():
    report = _report([(1, 0), (1, 9), (2, 3), (3, 0), (3, 20), (3, 40)])
    for tally in ecc_impact_report(report, default_specs(max_symbol_errors=3)).values():
        assert sum(tally.values()) == 3


def test_synthesized_positions_spread_across_chunk():
    positions = ChunkHistogram({2: 1, 3: 2}).chunk_positions()
    assert positions == [(0, 32), (0, 21, 42), (0, 21, 42)]
