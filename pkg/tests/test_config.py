import attrs
import pytest

from trrsim.config import (
    DeviceConfig,
    DisturbanceModelConfig,
    RowMappingConfig,
    TimingParams,
    device_config_from_mapping,
    merge_overrides,
)
from trrsim.device import new_device
from trrsim.errors import ConfigParseError, InvalidConfigError
from trrsim.presets import best_params, build_config, list_presets, load_config_file, load_profile


def test_default_timing_fits_149_hammers():
    assert TimingParams().hammers_per_interval == 149
    assert TimingParams().act_cycle == 50


@pytest.mark.parametrize("changes, field", [
    ({"rows_per_bank": 32}, "rows_per_bank"),
    ({"banks": 0}, "banks"),
    ({"row_bits": 100}, "row_bits"),
    ({"pins": 5}, "pins"),
    ({"disturbance": DisturbanceModelConfig(hc_first=0)}, "disturbance.hc_first"),
    ({"mapping": RowMappingConfig(scheme="spiral")}, "mapping.scheme"),
    ({"mapping": RowMappingConfig(remapped_rows=[(3, 5)])}, "mapping.remapped_rows"),
])
def test_invalid_config_names_field(changes, field):
    with pytest.raises(InvalidConfigError) as e:
        attrs.evolve(DeviceConfig(), **changes).validate()
    assert e.value.field == field


def test_catalog_has_every_module():
    names = list_presets()
    for vendor in "ABC":
        for i in range(15):
            assert f"{vendor}{i}" in names


@pytest.mark.parametrize("profile", ["desk", "paper"])
def test_every_preset_builds(profile):
    for preset in list_presets():
        config = build_config(preset, profile)
        assert config.rows_per_bank == load_profile(profile).rows_per_bank


def test_ground_truth_a0():
    truth = new_device(build_config("A0")).ground_truth()
    assert (truth.variant, truth.ratio, truth.neighbors, truth.capacity, truth.per_bank) == (
        "counter", 9, (-2, -1, 1, 2), 16, True)
    assert truth.regular_refresh_period == 3758


def test_ground_truth_b0():
    truth = new_device(build_config("B0")).ground_truth()
    assert (truth.ratio, truth.neighbors, truth.capacity, truth.per_bank) == (4, (-1, 1), 1, False)


def test_ground_truth_c7():
    truth = new_device(build_config("C7")).ground_truth()
    assert (truth.ratio, truth.neighbors, truth.window_size) == (17, "pair", 2048)


def test_rows_per_ref_derived_from_profile():
    assert build_config("A0", "desk").regular_refresh.rows_per_ref == 1
    assert build_config("A0", "paper").regular_refresh.rows_per_ref == 18
    assert build_config("B0", "paper").regular_refresh.rows_per_ref == 9


def test_unknown_preset():
    with pytest.raises(ConfigParseError):
        build_config("Z9")


def test_best_params_families():
    assert best_params("A_TRR1")["family"] == "counter_evict"
    assert best_params("B_TRR3")["family"] == "sampler_flood"
    assert best_params("C_TRR3")["preload_dummy_hammers"] == 1024


def test_config_file_overrides(tmp_path):
    path = tmp_path / "dev.toml"
    path.write_text('preset = "B0"\nseed = 7\n[disturbance]\nhc_first = 30000\n')
    config = load_config_file(path)
    assert config.seed == 7
    assert config.disturbance.hc_first == 30000
    assert config.trr.label == "B_TRR1"


def test_config_file_bad_value(tmp_path):
    path = tmp_path / "dev.toml"
    path.write_text('preset = "A0"\n[disturbance]\nhc_first = -1\n')
    with pytest.raises(ConfigParseError):
        load_config_file(path)


def test_config_file_unreadable(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("preset = ")
    with pytest.raises(ConfigParseError):
        load_config_file(path)


def test_mapping_roundtrip_builder():
    config = device_config_from_mapping({
        "banks": 8,
        "mapping": {"scheme": "xor_scramble", "xor_mask": 1},
        "trr": {"variant": "counter", "trr_ref_period": 9, "counter": {"table_size": 4}},
    })
    assert config.validate().trr.counter.table_size == 4


def test_unknown_key_rejected():
    with pytest.raises(InvalidConfigError):
        device_config_from_mapping({"timing": {"t_rcd": 5}})


def test_merge_overrides_nested_trr():
    config = merge_overrides(build_config("A0"), {"trr": {"counter": {"table_size": 8}}})
    assert config.trr.counter.table_size == 8
    assert config.trr.trr_ref_period == 9
