import math

import pytest

from trrsim.analyzer import (
    Aggressor,
    ExperimentConfig,
    RegularSchedule,
    infer_regular_refresh_period,
    measure_hc_first,
    reset_trr_state,
    run_experiment,
    verify_adjacency,
)
from trrsim.config import DeviceConfig, DisturbanceModelConfig, RowMappingConfig
from trrsim.device import new_device
from trrsim.errors import BudgetExceededError, InvalidConfigError, ProbeOverlapError
from trrsim.presets import build_config
from trrsim.rng import DeterministicRNG
from trrsim.scout import ProfilingConfig, RowGroupLayout, find_row_groups


def _group(device, layout="R-R", rows=(0, 640)):
    return find_row_groups(device, ProfilingConfig(rows, RowGroupLayout(layout), consistency_checks=20))[0]


def test_schedule_arithmetic():
    s = RegularSchedule(period=100, rows_per_ref=2, origin=10)
    assert list(s.refresh_refs(30, 0, 300)) == [25, 125, 225]
    assert s.covers(30, 20, 30)
    assert not s.covers(30, 26, 125)


def test_probe_overlap_rejected(preset_device):
    device = preset_device("A0")
    group = _group(device)
    with pytest.raises(ProbeOverlapError):
        run_experiment(device, ExperimentConfig(groups=[group], aggressors=[(group.rows[0], 10)]))


def test_invalid_experiment():
    with pytest.raises(InvalidConfigError):
        ExperimentConfig(groups=[]).validate()


def test_synchronized_budget(preset_device):
    device = preset_device("A0")
    group = _group(device)
    cfg = ExperimentConfig(groups=[group], aggressors=[Aggressor(group.gap_rows[0], 150)], ref_synchronized=True)
    with pytest.raises(BudgetExceededError):
        run_experiment(device, cfg)


def test_probe_survival_matches_regular_refresh(preset_device):
    device = preset_device("none")
    group = _group(device)
    result = run_experiment(device, ExperimentConfig(groups=[group], refs_per_round=1, rounds=64))
    for v in result.verdicts:
        expected = bool(device.regular_refresh_refs(v.row, result.ref_start, result.ref_end))
        assert v.refreshed == expected


def test_trr_refreshes_hammered_neighbors(preset_device):
    device = preset_device("A0")
    group = _group(device)
    cfg = ExperimentConfig(
        groups=[group],
        aggressors=[(group.gap_rows[0], 5000)],
        refs_per_round=18,
        reset_trr_state=True,
        reset_periods=1,
    )
    result = run_experiment(device, cfg)
    assert all(v.refreshed for v in result.verdicts)
    assert {v.attribution for v in result.verdicts} == {"TRR"}
    trr_refreshed = {row for n, _, row in device.refresh_log if result.ref_start <= n < result.ref_end}
    assert set(group.rows) <= trr_refreshed


def test_reset_flushes_counter_table(preset_device):
    device = preset_device("A0")
    device.hammer(0, 100, 4000)
    reset_trr_state(device, reset_periods=1)
    assert 100 not in device.counter_table(0)


def test_measure_hc_first_matches_weakest_cell():
    config = DeviceConfig(rows_per_bank=256, disturbance=DisturbanceModelConfig(hc_first=2000)).validate()
    device = new_device(config)
    measured = measure_hc_first(device, 0, 100, limit=1 << 14)
    assert measured == math.ceil(device.cell_table(0).min_threshold[100])


def test_verify_adjacency():
    config = DeviceConfig(rows_per_bank=256, disturbance=DisturbanceModelConfig(hc_first=2000)).validate()
    device = new_device(config)
    assert verify_adjacency(device, 0, 50, [49, 51])
    assert not verify_adjacency(device, 0, 50, [60])
    assert verify_adjacency(device, 0, 50, [51], hammers=20_000, partner=52)


@pytest.mark.slow
@pytest.mark.parametrize("preset, period", [("A0", 3758), ("none", 8192)])
def test_infer_regular_refresh_period(preset_device, preset, period):
    device = preset_device(preset, trace=False)
    group = _group(device)
    reset_trr_state(device, [(0, r) for r in range(*group.footprint)], reset_periods=1)
    assert infer_regular_refresh_period(device, group) == period


def test_jitter_adds_seeded_refs(preset_device):
    device = preset_device("none")
    group = _group(device)
    cfg = ExperimentConfig(groups=[group], refs_per_round=3, jitter_refs=8)
    result = run_experiment(device, cfg, rng=DeterministicRNG(5))
    assert result.ref_end - result.ref_start == DeterministicRNG(5).randbelow(8) + 3


def test_span_group_sees_four_refreshed_neighbors(preset_device):
    device = preset_device("A0")
    group = _group(device, "RRR-RRR")
    aggressor = group.gap_rows[0]
    cfg = ExperimentConfig(groups=[group], aggressors=[(aggressor, 5000)], refs_per_round=18,
                           reset_trr_state=True, reset_periods=1)
    result = run_experiment(device, cfg)
    assert result.trr_rows() == {r for r in group.rows if abs(r - aggressor) <= 2}


@pytest.mark.parametrize("mode, top", [("cascaded", 10), ("interleaved", 1)])
def test_hammer_mode_decides_what_the_counters_hold(preset_device, mode, top):
    # 20 rows through a 16-entry table: back-to-back hammers accumulate, round-robin ones thrash
    device = preset_device("A0", trace=False)
    group = _group(device)
    device.trr.reset()
    aggressors = [(1000 + 2 * i, 10) for i in range(20)]
    cfg = ExperimentConfig(groups=[group], aggressors=aggressors, hammer_mode=mode, refs_per_round=0,
                           aggressor_data=None)
    run_experiment(device, cfg)
    assert max(device.counter_table(0).values()) == top


def test_verify_adjacency_follows_spare_remapping():
    mapping = RowMappingConfig(spare_rows=16, remapped_rows=((51, 256), (60, 257)))
    config = DeviceConfig(rows_per_bank=256, mapping=mapping,
                          disturbance=DisturbanceModelConfig(hc_first=2000)).validate()
    device = new_device(config)
    assert verify_adjacency(device, 0, 50, [49])
    assert not verify_adjacency(device, 0, 50, [51])
    # both remapped rows sit side by side in the spare region
    assert verify_adjacency(device, 0, 60, [51])


def test_verify_adjacency_on_paired_rows():
    config = DeviceConfig(rows_per_bank=256, disturbance=DisturbanceModelConfig(hc_first=2000, paired_rows=True))
    device = new_device(config.validate())
    assert verify_adjacency(device, 0, 11, [10])
    assert not verify_adjacency(device, 0, 11, [12])
    # the even row of a pair disturbs nothing
    assert not verify_adjacency(device, 0, 12, [11])
    assert not verify_adjacency(device, 0, 12, [13])


@pytest.mark.slow
def test_two_rows_per_ref_halve_the_period():
    config = build_config("none", "desk", 0,
                          overrides={"regular_refresh": {"rows_per_ref": 2, "full_pass_period_refs": None}})
    assert config.regular_refresh.period == 4096
    device = new_device(config)
    group = _group(device)
    assert infer_regular_refresh_period(device, group) == 4096
