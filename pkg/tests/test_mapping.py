import pytest
from hypothesis import given, settings, strategies as st

from trrsim.config import DeviceConfig, RowMappingConfig
from trrsim.errors import OutOfRangeError
from trrsim.mapping import RowMap


def _map(**mapping) -> RowMap:
    return RowMap(DeviceConfig(rows_per_bank=4096, mapping=RowMappingConfig(**mapping)).validate())


def test_identity():
    assert _map().to_physical(7) == 7


def test_xor_scramble():
    assert _map(scheme="xor_scramble", xor_mask=1).to_physical(6) == 7


def test_block_reverse():
    m = _map(scheme="block_reverse", block_size=8)
    assert [m.to_physical(r) for r in range(8)] == [7, 6, 5, 4, 3, 2, 1, 0]


@pytest.mark.parametrize("mapping", [
    {},
    {"scheme": "xor_scramble", "xor_mask": 0b1011},
    {"scheme": "block_reverse", "block_size": 16},
    {"remapped_rows": [(5, 4097), (100, 4100)]},
])
def test_exhaustive_inverse(mapping):
    m = _map(**mapping)
    physical = [m.to_physical(r) for r in range(4096)]
    assert len(set(physical)) == 4096
    assert all(m.to_logical(p) == r for r, p in enumerate(physical))


@settings(max_examples=200)
@given(mask=st.integers(0, 4095), row=st.integers(0, 4095))
def test_xor_bijection(mask, row):
    m = _map(scheme="xor_scramble", xor_mask=mask)
    assert m.to_logical(m.to_physical(row)) == row


def test_remapped_row_routes_to_spare():
    m = _map(remapped_rows=[(5, 4097)])
    assert m.to_physical(5) == 4097
    assert m.to_logical(4097) == 5
    with pytest.raises(OutOfRangeError):
        m.to_logical(5)
    assert m.region(4097) == (4096, 4112)


@pytest.mark.parametrize("row", [-1, 4096])
def test_out_of_range(row):
    with pytest.raises(OutOfRangeError):
        _map().to_physical(row)
