"""Vendor TRR behaviors, asserted against the ground-truth action log."""
import pytest
from hypothesis import given, settings, strategies as st

from trrsim.config import CounterBasedConfig, SamplingBasedConfig, TrrMechanismConfig, WindowBasedConfig
from trrsim.trr import CounterTable, CounterTrr, SamplingTrr, WindowTrr


def _refs(device, n):
    out = []
    for _ in range(n):
        out.extend(device.ref())
    return out


# Vendor A: counter table ---------------------------------------------------------------------

def test_every_ninth_ref_is_trr_capable(preset_device):
    device = preset_device("A0")
    device.hammer(0, 100, 5000)
    device.hammer(0, 300, 50)
    actions = _refs(device, 18)
    assert sorted({a.ref_index for a in actions}) == [8, 17]


def test_a_trr1_refreshes_two_rows_each_side(preset_device):
    device = preset_device("A0")
    device.hammer(0, 100, 5000)
    actions = _refs(device, 9)
    assert actions[0].aggressor == 100
    assert actions[0].victims == (98, 99, 101, 102)


def test_a_trr2_refreshes_adjacent_rows_only(preset_device):
    device = preset_device("A13")
    device.hammer(0, 100, 5000)
    actions = _refs(device, 9)
    assert actions[0].victims == (99, 101)


def test_tref_a_and_tref_b_alternate(preset_device):
    device = preset_device("A0")
    kinds = []
    for _ in range(4):
        for row in range(10, 26):
            device.hammer(0, row, 5)
        kinds += [a.kind for a in _refs(device, 9)]
    assert kinds == ["tref_b", "tref_a", "tref_b", "tref_a"]


def test_tref_a_detects_max_counter(preset_device):
    device = preset_device("A0")
    device.hammer(0, 500, 1)
    _refs(device, 9)  # TREF_b consumes slot 0
    device.hammer(0, 100, 40)
    device.hammer(0, 300, 700)
    device.hammer(0, 200, 90)
    actions = _refs(device, 9)
    assert [(a.kind, a.aggressor) for a in actions] == [("tref_a", 300)]


def test_table_holds_sixteen_rows(preset_device):
    device = preset_device("A0")
    for row in range(100, 140, 2):
        device.hammer(0, row, 10)
    assert len(device.counter_table(0)) == 16


def test_min_counter_eviction():
    table = CounterTable(16, "min_counter")
    for i in range(16):
        table.touch((0, i), 50 if i == 3 else 100)
    table.touch((0, 99))
    snapshot = table.snapshot()
    assert (0, 3) not in snapshot
    assert snapshot[(0, 99)] == 1


def test_min_counter_tie_evicts_oldest():
    table = CounterTable(2, "min_counter")
    table.touch((0, 1), 5)
    table.touch((0, 2), 5)
    table.touch((0, 3))
    assert set(table.snapshot()) == {(0, 2), (0, 3)}


def test_detection_resets_only_detected_counter(preset_device):
    device = preset_device("A0")
    device.hammer(0, 500, 1)
    _refs(device, 9)
    device.hammer(0, 100, 400)
    device.hammer(0, 200, 300)
    before = device.counter_table(0)
    _refs(device, 9)
    after = device.counter_table(0)
    assert after[100] == 0
    assert {r: n for r, n in after.items() if r != 100} == {r: n for r, n in before.items() if r != 100}


def test_entry_persists_and_is_redetected_by_tref_b(preset_device):
    device = preset_device("A0")
    device.hammer(0, 100, 10)
    _refs(device, 32768)
    assert 100 in device.counter_table(0)
    hits = [a.ref_index for a in device.trr_log if a.aggressor == 100 and a.kind == "tref_b"]
    assert len(hits) >= 100
    # every 16th TREF_b, and TREF_b is every other capable REF
    assert {b - a for a, b in zip(hits, hits[1:])} == {16 * 2 * 9}


def test_counter_tables_are_per_bank(preset_device):
    device = preset_device("A0")
    device.hammer(0, 100, 50)
    device.hammer(1, 200, 50)
    assert device.counter_table(0) == {100: 50}
    assert device.counter_table(1) == {200: 50}


def test_counter_reset_state():
    trr = CounterTrr(TrrMechanismConfig("counter", 9, counter=CounterBasedConfig()), 4, 0)
    trr.on_activate(0, 10)
    trr.reset()
    assert trr.table_snapshot(0) == {}
    assert trr.tables[0].pointer == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 40), st.integers(1, 300)), min_size=1, max_size=200))
def test_table_never_exceeds_capacity(hammers):
    table = CounterTable(16, "min_counter")
    for row, n in hammers:
        table.touch((0, row), n)
        assert len(table.snapshot()) <= 16
        assert len(table.index) == len([s for s in table.slots if s is not None])


# Vendor B: sampler ---------------------------------------------------------------------------

def test_b_trr1_every_fourth_ref(preset_device):
    device = preset_device("B0")
    device.hammer(0, 100, 3000)
    assert sorted({a.ref_index for a in _refs(device, 8)}) == [3, 7]


@pytest.mark.parametrize("seed", range(5))
def test_second_aggressor_always_refreshed(preset_device, seed):
    device = preset_device("B0", seed)
    device.hammer(0, 100, 5000)
    device.hammer(0, 300, 3000)
    actions = _refs(device, 4)
    assert [a.aggressor for a in actions] == [300]
    assert actions[0].victims == (299, 301)


@pytest.mark.parametrize("seed", range(5))
def test_guarantee_window_always_samples(seed):
    config = TrrMechanismConfig("sampling", 4, sampling=SamplingBasedConfig())
    trr = SamplingTrr(config, 16, seed)
    trr.on_activate_cycle([(0, 50)], 100)
    trr.on_activate_cycle([(0, 7)], 2048)
    assert list(trr.sampled(0)) == [(0, 7)]


def test_shared_sampler_overwritten_from_other_bank(preset_device):
    device = preset_device("B0")
    device.hammer(0, 100, 3000)
    device.hammer(1, 200, 3000)
    actions = _refs(device, 4)
    assert [(a.bank, a.aggressor) for a in actions] == [(1, 200)]
    assert device.sampled_rows(0) == ((1, 200),)


def test_sampler_capacity_one(preset_device):
    device = preset_device("B9")
    for row in (100, 200, 300):
        device.hammer(0, row, 2500)
    assert len(device.sampled_rows(0)) == 1


def test_sample_sticks_across_trr_refs(preset_device):
    device = preset_device("B0")
    device.hammer(0, 100, 3000)
    actions = _refs(device, 16)
    assert len(actions) == 4
    assert {(a.aggressor, a.victims) for a in actions} == {(100, (99, 101))}


def test_b_trr3_per_bank_sampler(preset_device):
    device = preset_device("B13")
    device.hammer(0, 100, 300)
    device.hammer(1, 200, 300)
    actions = _refs(device, 2)
    assert {(a.bank, a.aggressor) for a in actions} == {(0, 100), (1, 200)}
    assert actions[0].victims in ((98, 99, 101, 102), (198, 199, 201, 202))


def test_run_one_short_of_guarantee_is_sometimes_missed():
    config = TrrMechanismConfig("sampling", 4, sampling=SamplingBasedConfig(sample_guarantee_window=300))
    missed = 0
    for seed in range(20):
        trr = SamplingTrr(config, 1, seed)
        trr.on_activate_cycle([(0, 50)], 16384)
        trr.on_activate_cycle([(0, 7)], 299)
        missed += list(trr.sampled(0)) != [(0, 7)]
    assert missed > 0


def test_same_row_address_across_banks_forms_one_run():
    config = TrrMechanismConfig("sampling", 4, sampling=SamplingBasedConfig(sample_guarantee_window=256))
    for seed in range(5):
        trr = SamplingTrr(config, 4, seed)
        trr.on_activate_cycle([(0, 100), (0, 102)], 40)
        trr.on_activate_cycle([(b, 900) for b in range(4)], 64)
        assert trr.sampled(0)[0][1] == 900


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 4)), min_size=1, max_size=4), max_size=6),
    st.integers(1, 700),
)
def test_sampler_cycle_matches_single_acts(cycles, rounds):
    config = TrrMechanismConfig("sampling", 4, sampling=SamplingBasedConfig(sample_guarantee_window=128))
    fast, slow = SamplingTrr(config, 2, 3), SamplingTrr(config, 2, 3)
    for acts in cycles:
        fast.on_activate_cycle(acts, rounds)
        for _ in range(rounds):
            for bank, row in acts:
                slow.on_activate(bank, row)
    f, s = fast.streams[0], slow.streams[0]
    assert (list(f.slot), f.countdown, f.run_row, f.run_len) == (list(s.slot), s.countdown, s.run_row, s.run_len)


# Vendor C: ACT window ------------------------------------------------------------------------

def test_trr_deferred_without_acts(preset_device):
    device = preset_device("C7")
    assert _refs(device, 40) == []
    device.hammer(0, 101, 100)
    actions = _refs(device, 1)
    assert [(a.aggressor, a.victims) for a in actions] == [(101, (100,))]


def test_pending_trr_starts_a_fresh_window(preset_device):
    device = preset_device("C9")
    _refs(device, 20)
    device.hammer(0, 501, 30)
    assert _refs(device, 1) == []
    assert device.window_rows(0) == ()
    device.hammer(0, 301, 100)
    assert [a.aggressor for a in _refs(device, 1)] == [301]


def test_c_trr1_every_seventeenth_ref(preset_device):
    device = preset_device("C7")
    indices = []
    for _ in range(3):
        device.hammer(0, 101, 100)
        indices += [a.ref_index for a in _refs(device, 17)]
    assert indices == [16, 33, 50]


def test_window_truncates_after_2048_acts(preset_device):
    device = preset_device("C7")
    device.hammer(0, 101, 2048)
    device.hammer(0, 301, 5000)
    actions = _refs(device, 17)
    assert [a.aggressor for a in actions] == [101]


def test_c_trr3_window_is_1024(preset_device):
    device = preset_device("C12")
    device.hammer(0, 101, 1023)
    device.hammer(0, 201, 100)
    device.hammer(0, 301, 5000)
    assert device.window_rows(0) == (101, 201)
    assert device.trr.window_counts(0) == {101: 1023, 201: 100}


def test_light_rows_are_never_picked(preset_device):
    for seed in range(10):
        device = preset_device("C9", seed)
        for row in range(500, 532):
            device.hammer(0, row, 63)
        device.hammer(0, 101, 64)
        assert [a.aggressor for a in _refs(device, 9)] == [101]


def test_rank_bias_prefers_the_first_aggressor():
    config = TrrMechanismConfig("window", 1, window=WindowBasedConfig())
    first = 0
    for seed in range(400):
        trr = WindowTrr(config, 1, seed)
        trr.on_activate_cycle([(0, 10)], 100)
        trr.on_activate_cycle([(0, 20)], 100)
        first += trr.on_ref(0)[0].aggressor == 10
    # 1 / (1 + 0.6)
    assert 0.54 < first / 400 < 0.71


def test_uniform_bias_ignores_order():
    config = TrrMechanismConfig("window", 1, window=WindowBasedConfig(early_bias="uniform"))
    first = 0
    for seed in range(400):
        trr = WindowTrr(config, 1, seed)
        trr.on_activate_cycle([(0, 10), (0, 20)], 100)
        first += trr.on_ref(0)[0].aggressor == 10
    assert 0.40 < first / 400 < 0.60


def test_pair_span_refreshes_partner_only(preset_device):
    device = preset_device("C7")
    device.hammer(0, 100, 100)
    actions = _refs(device, 17)
    assert actions[0].victims == (101,)


def test_window_reset_state():
    trr = WindowTrr(TrrMechanismConfig("window", 8, window=WindowBasedConfig(window_size=1024)), 2, 0)
    trr.on_activate(0, 5)
    trr.reset()
    assert trr.window_rows(0) == ()


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 9)), min_size=1, max_size=4, unique=True),
             max_size=6),
    st.integers(1, 40),
)
def test_window_cycle_matches_single_acts(cycles, rounds):
    config = TrrMechanismConfig("window", 8, window=WindowBasedConfig(window_size=50))
    fast, slow = WindowTrr(config, 2, 0), WindowTrr(config, 2, 0)
    for acts in cycles:
        fast.on_activate_cycle(acts, rounds)
        for _ in range(rounds):
            for bank, row in acts:
                slow.on_activate(bank, row)
    for bank in (0, 1):
        assert fast.window_rows(bank) == slow.window_rows(bank)
        assert fast.window_counts(bank) == slow.window_counts(bank)
        assert fast.windows[bank].filled == slow.windows[bank].filled
