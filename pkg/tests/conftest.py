import pytest

from trrsim.config import DeviceConfig
from trrsim.device import new_device
from trrsim.presets import build_config

# one preset per TRR variant
VARIANT_PRESETS = {
    "A_TRR1": "A0",
    "A_TRR2": "A13",
    "B_TRR1": "B0",
    "B_TRR2": "B9",
    "B_TRR3": "B13",
    "C_TRR1": "C7",
    "C_TRR2": "C9",
    "C_TRR3": "C12",
}


@pytest.fixture
def plain_config():
    """Small TRR-free device."""
    return DeviceConfig(rows_per_bank=256, banks=4).validate()


@pytest.fixture
def plain_device(plain_config):
    return new_device(plain_config)


@pytest.fixture
def preset_device():
    """Factory: desk-profile device for a preset, with TRR action tracing."""
    def make(preset: str, seed: int = 0, trace: bool = True):
        return new_device(build_config(preset, "desk", seed), trace=trace)
    return make
