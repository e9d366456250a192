import json

import pytest

from trrsim import cli
from trrsim.cli import ACCEPTANCE_PERIODS, EXIT_ERROR, EXIT_INCONCLUSIVE, EXIT_OK, RunManifest, main
from trrsim.reveng import InferredTrrProfile


def _records(run_dir):
    with open(run_dir / "results.jsonl") as f:
        return [json.loads(line) for line in f]


def _status(run_dir):
    return (run_dir / "summary.txt").read_text().splitlines()[0]


def test_device_verb(tmp_path):
    assert main(["device", "--preset", "A0", "--output", str(tmp_path)]) == EXIT_OK
    run_dir = tmp_path / "device-A0-s0-desk"
    kinds = [r["kind"] for r in _records(run_dir)]
    assert kinds == ["device", "ground_truth"]
    truth = _records(run_dir)[1]
    assert truth["label"] == "A_TRR1"
    assert truth["ratio"] == 9
    assert _status(run_dir) == "status: ok"


def test_unknown_verb_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["frobnicate", "--output", str(tmp_path)])
    assert e.value.code == 2


def test_preset_and_config_are_exclusive(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["device", "--preset", "A0", "--config", "dev.toml", "--output", str(tmp_path)])
    assert e.value.code == 2


def test_unknown_preset_is_an_error(tmp_path):
    assert main(["device", "--preset", "Z9", "--output", str(tmp_path)]) == EXIT_ERROR
    assert _status(tmp_path / "device-Z9-s0-desk") == "status: error"


def test_config_file(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text('preset = "B13"\n[disturbance]\nhc_first = 30000\n')
    assert main(["device", "--config", str(path), "--output", str(tmp_path)]) == EXIT_OK
    device = _records(tmp_path / "device-tiny-s0-desk")[0]
    assert device["hc_first"] == 30000


def test_ecc_report_is_deterministic(tmp_path):
    args = ["ecc-report", "--synthetic", "1:120,2:8,7:1"]
    assert main(args + ["--output", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--output", str(tmp_path / "b")]) == EXIT_OK
    name = "ecc-report-none-s0-desk"
    first = (tmp_path / "a" / name / "results.jsonl").read_bytes()
    assert first == (tmp_path / "b" / name / "results.jsonl").read_bytes()
    records = _records(tmp_path / "a" / name)
    parity = [r for r in records if r["kind"] == "rs_parity_needed"][0]
    assert parity["parity_symbols"] == 7
    csv_text = (tmp_path / "a" / name / "histogram.csv").read_text().splitlines()
    assert csv_text == ["flips_per_chunk,chunks", "1,120", "2,8", "7,1"]


def test_store_records_run(tmp_path):
    from trrsim.services.runs import RunService

    args = ["ecc-report", "--synthetic", "1:3", "--output", str(tmp_path), "--store"]
    assert main(args) == EXIT_OK
    assert (tmp_path / "trrsim.db").exists()
    runs = RunService().list_runs("ecc-report")
    assert len(runs) == 1
    assert runs[0]["status"] == "ok"


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("TRRSIM_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["device", "--preset", "C12"]) == EXIT_OK
    assert (tmp_path / "env" / "device-C12-s0-desk" / "results.jsonl").exists()
    assert (tmp_path / "env" / "logs" / "trrsim.log").exists()


def test_scout_verb(tmp_path):
    assert main(["scout", "--preset", "A0", "--groups", "2", "--output", str(tmp_path)]) == EXIT_OK
    groups = [r for r in _records(tmp_path / "scout-A0-s0-desk") if r["kind"] == "row_group"]
    assert len(groups) == 2


def test_scout_without_enough_groups_is_inconclusive(tmp_path):
    code = main(["scout", "--preset", "A0", "--groups", "100000", "--output", str(tmp_path)])
    assert code == EXIT_INCONCLUSIVE
    assert _status(tmp_path / "scout-A0-s0-desk") == "status: inconclusive"


def test_run_dir_naming():
    m = RunManifest(verb="attack", config_path="cfg/my_dimm.toml", seed=4, profile="paper", output_dir="out")
    assert str(m.run_dir) == "out/attack-my_dimm-s4-paper"


def test_bad_synthetic_histogram_is_an_error(tmp_path):
    assert main(["ecc-report", "--synthetic", "7-1", "--output", str(tmp_path)]) == EXIT_ERROR
    assert _status(tmp_path / "ecc-report-none-s0-desk") == "status: error"


class _TruthfulEngineer:
    """Stands in for the reverse engineer: reports the device's own profile."""

    def __init__(self, device, scale):
        self.truth = device.ground_truth()

    def full_profile(self):
        t = self.truth
        return InferredTrrProfile(
            trr_to_ref_ratio=t.ratio,
            neighbor_span=t.neighbors,
            detection_kind=t.variant,
            tracker_capacity=t.capacity,
            per_bank_scope=t.per_bank,
            window_size=t.window_size,
            regular_refresh_period_refs=t.regular_refresh_period,
        )


def test_acceptance_attacks_for_eight_periods(tmp_path, monkeypatch):
    scanned = []

    def scan(device, family, params, positions, periods, processes):
        scanned.append((family, periods))
        return {p: 0 if family.startswith("plain") else 3 for p in positions}

    monkeypatch.setattr(cli, "TrrReverseEngineer", _TruthfulEngineer)
    monkeypatch.setattr(cli, "scan_positions", scan)
    assert main(["acceptance", "--preset", "C0", "--output", str(tmp_path)]) == EXIT_OK
    assert ACCEPTANCE_PERIODS == 8
    assert scanned == [
        ("plain_single_sided", 8),
        ("plain_double_sided", 8),
        ("window_preload", 8),
    ]
