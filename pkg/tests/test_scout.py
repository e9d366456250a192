import pytest

from trrsim.config import DeviceConfig
from trrsim.device import new_device
from trrsim.errors import InsufficientGroupsError, InvalidConfigError
from trrsim.scout import ProfilingConfig, RowGroupLayout, find_row_groups, revalidate, scan_failing_rows


def _profile(device, layout="R-R", groups=3, **kwargs):
    return find_row_groups(device, ProfilingConfig(
        (0, 200), RowGroupLayout(layout), groups_needed=groups, consistency_checks=20, **kwargs,
    ))


def test_layout_offsets():
    layout = RowGroupLayout("RRR-RRR")
    assert layout.offsets == (0, 1, 2, 4, 5, 6)
    assert layout.gap_offsets == (3,)
    assert layout.span == 7


@pytest.mark.parametrize("pattern", ["", "R-X", "---", "R" * 33])
def test_bad_layout(pattern):
    with pytest.raises(InvalidConfigError):
        RowGroupLayout(pattern)


def test_bad_profiling_config(plain_device):
    with pytest.raises(InvalidConfigError) as e:
        find_row_groups(plain_device, ProfilingConfig((0, 100), RowGroupLayout("R-R"), t_step_ms=0))
    assert e.value.field == "t_initial_ms"


def test_groups_share_one_retention(plain_device):
    groups = _profile(plain_device)
    assert len(groups) >= 3
    assert len({g.retention_ms for g in groups}) == 1
    for g in groups:
        assert g.rows == (g.anchor, g.anchor + 2)
        assert g.gap_rows == (g.anchor + 1,)


def test_groups_do_not_overlap(plain_device):
    groups = _profile(plain_device, groups=4)
    spans = sorted(g.footprint for g in groups)
    for (_, end), (start, _) in zip(spans, spans[1:]):
        assert start >= end + 4


def test_groups_keep_clear_of_excluded_rows(plain_device):
    excluded = list(range(0, 60))
    groups = _profile(plain_device, groups=2, exclude=excluded)
    assert all(g.anchor >= 60 + 4 for g in groups)


def test_returned_rows_retain_and_fail(plain_device):
    for g in _profile(plain_device):
        assert revalidate(plain_device, g, 100)


def _plant_pair(device, anchor, retention_ms, alt_retention_ms=None):
    device.clear_weak_cells(0, range(anchor, anchor + 3))
    for row in (anchor, anchor + 2):
        device.plant_weak_cell(0, row, 7, retention_ms, alt_retention_ms)


def test_planted_pair_is_found_at_its_retention(plain_device):
    _plant_pair(plain_device, 100, 150)
    groups = _profile(plain_device, groups=1)
    assert [(g.anchor, g.retention_ms) for g in groups] == [(100, 150)]


def test_no_vrt_rows_returned(plain_device):
    # the VRT pair fails with the steady pair in the scan, then flips to 250 ms during the checks
    _plant_pair(plain_device, 100, 150)
    _plant_pair(plain_device, 110, 150, alt_retention_ms=250)
    assert plain_device.cell_table(0).vrt_rows() >= {110, 112}
    groups = _profile(plain_device, groups=1)
    assert [g.rows for g in groups] == [(100, 102)]


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10))
def test_row_scout_soundness(seed):
    device = new_device(DeviceConfig(rows_per_bank=2048, seed=seed).validate())
    groups = find_row_groups(device, ProfilingConfig(
        (0, 640), RowGroupLayout("R-R"), groups_needed=8, consistency_checks=20,
    ))
    vrt = device.cell_table(0).vrt_rows()
    for g in groups:
        assert not set(g.rows) & vrt
        assert revalidate(device, g, 100)


def test_scout_gives_up_below_weak_retention(plain_device):
    with pytest.raises(InsufficientGroupsError) as e:
        _profile(plain_device, t_max_ms=200)
    assert e.value.found == 0


def test_scan_failing_rows_shrinks_with_time(plain_device):
    early = scan_failing_rows(plain_device, 0, (0, 200), 200)
    late = scan_failing_rows(plain_device, 0, (0, 200), 500)
    assert not early
    assert len(late) > 100
