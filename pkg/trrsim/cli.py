"""Batch command line: ``trrsim <verb> --preset A0 [options]``.

Every verb writes ``results.jsonl`` (one sorted-key JSON object per line) and
``summary.txt`` into ``<output>/<verb>-<name>-s<seed>-<profile>/``; sweeps and
histograms add a CSV. Result files carry no timestamps, so a manifest always
reproduces the same bytes.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import attrs

from trrsim import configure_logging
from trrsim.analyzer import ExperimentConfig, run_experiment
from trrsim.attacks import (
    FAMILIES,
    BitFlipReport,
    attack_refs,
    bank_positions,
    default_params,
    execute,
    pattern_for,
    scan_positions,
    sweep_hammers,
    victim_positions,
)
from trrsim.config import DeviceConfig
from trrsim.device import new_device
from trrsim.ecc import ChunkHistogram, chunk_histogram, default_specs, ecc_impact_report, rs_parity_needed
from trrsim.errors import InconclusiveError, InvalidConfigError, TrrSimError
from trrsim.presets import ScaleProfile, best_params, build_config, load_config_file, load_profile
from trrsim.reveng import TrrReverseEngineer
from trrsim.scout import ProfilingConfig, RowGroupLayout, find_row_groups
from trrsim.settings import Config

logger = logging.getLogger(__name__)

VERBS = ("device", "scout", "analyze", "reveng", "attack", "ecc-report", "acceptance")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_INCONCLUSIVE = 3

# presets whose tuned pattern cannot reach HC_first within one regular-refresh period
EVASION_EXCLUDED_PRESETS = ("B1", "B2", "B3", "B4")
EVASION_SHARE = 95.0
# fewest regular-refresh periods the evasion check hammers for
ACCEPTANCE_PERIODS = 8


@attrs.frozen
class RunManifest:
    verb: str
    preset: Optional[str] = None
    config_path: Optional[str] = None
    seed: int = 0
    output_dir: str = "results"
    profile: str = "desk"
    store: bool = False
    jobs: Optional[int] = None
    options: Dict[str, Any] = attrs.field(factory=dict)

    @property
    def name(self) -> str:
        if self.config_path:
            return Path(self.config_path).stem
        return self.preset or "none"

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / f"{self.verb}-{self.name}-s{self.seed}-{self.profile}"

    def device_config(self) -> DeviceConfig:
        if self.config_path:
            return load_config_file(Path(self.config_path), self.profile, self.seed)
        return build_config(self.preset or "none", self.profile, self.seed)


class RunOutput:
    """Collects result records, summary lines and CSV tables for one run."""

    def __init__(self, run_dir: Path):
        self.run_dir = run_dir
        self.records: List[Dict[str, Any]] = []
        self.summary: List[str] = []
        self.tables: Dict[str, List[List[Any]]] = {}
        self.status = "ok"

    def record(self, kind: str, payload: Dict[str, Any]):
        self.records.append({"kind": kind, **payload})

    def line(self, text: str):
        self.summary.append(text)

    def table(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]):
        self.tables[name] = [list(header)] + [list(r) for r in rows]

    def write(self):
        self.run_dir.mkdir(parents=True, exist_ok=True)
        with open(self.run_dir / "results.jsonl", "w") as f:
            for r in self.records:
                f.write(json.dumps(r, sort_keys=True, default=_jsonable) + "\n")
        with open(self.run_dir / "summary.txt", "w") as f:
            f.write("\n".join([f"status: {self.status}"] + self.summary) + "\n")
        for name, rows in self.tables.items():
            with open(self.run_dir / name, "w", newline="") as f:
                csv.writer(f).writerows(rows)


def _jsonable(value):
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    if attrs.has(type(value)):
        return attrs.asdict(value)
    return str(value)


# Verbs -----------------------------------------------------------------------------------------

def _scale(m: RunManifest) -> ScaleProfile:
    return load_profile(m.profile)


def run_device(m: RunManifest, out: RunOutput):
    config = m.device_config()
    device = new_device(config)
    truth = device.ground_truth()
    out.record("device", {
        "name": config.name,
        "banks": config.banks,
        "rows_per_bank": config.rows_per_bank,
        "physical_rows": config.physical_rows,
        "row_bits": config.row_bits,
        "pins": config.pins,
        "hc_first": config.disturbance.hc_first,
        "hammers_per_interval": config.timing.hammers_per_interval,
    })
    out.record("ground_truth", attrs.asdict(truth))
    out.line(f"{config.name}: {config.banks} banks x {config.rows_per_bank} rows, TRR {truth.label}")


def run_scout(m: RunManifest, out: RunOutput):
    scale = _scale(m)
    device = new_device(m.device_config())
    groups = find_row_groups(device, ProfilingConfig(
        (0, scale.scout_rows),
        RowGroupLayout(m.options.get("layout", "R-R")),
        bank=m.options.get("bank", 0),
        groups_needed=m.options.get("groups", 1),
        consistency_checks=scale.consistency_checks,
    ))
    for g in groups:
        out.record("row_group", g.to_record())
    out.line(f"{len(groups)} groups at T={groups[0].retention_ms} ms")


def run_analyze(m: RunManifest, out: RunOutput):
    scale = _scale(m)
    device = new_device(m.device_config())
    opts = m.options
    group = find_row_groups(device, ProfilingConfig(
        (0, scale.scout_rows), RowGroupLayout(opts.get("layout", "R-R")),
        consistency_checks=scale.consistency_checks,
    ))[0]
    hammers = opts.get("hammers", 5000)
    cfg = ExperimentConfig(
        groups=[group],
        aggressors=[(r, hammers) for r in group.gap_rows],
        hammer_mode=opts.get("mode", "cascaded"),
        dummy_rows=opts.get("dummies", 0),
        dummy_hammers=opts.get("dummy_hammers", 0),
        refs_per_round=opts.get("refs_per_round", 1),
        rounds=opts.get("rounds", 1),
        reset_trr_state=True,
        reset_periods=scale.reset_periods,
    )
    result = run_experiment(device, cfg)
    out.record("group", group.to_record())
    out.record("experiment", result.to_record())
    out.line(f"probes {list(group.rows)}: TRR-refreshed {sorted(result.trr_rows())}")


def run_reveng(m: RunManifest, out: RunOutput):
    device = new_device(m.device_config())
    profile = TrrReverseEngineer(device, _scale(m)).full_profile()
    out.record("profile", profile.to_record())
    for entry in profile.evidence:
        out.record("evidence", entry)
    out.line(f"kind {profile.detection_kind}, ratio {profile.ratio_label or profile.trr_to_ref_ratio}, "
             f"span {profile.neighbor_span}, capacity {profile.tracker_capacity}, "
             f"per-bank {profile.per_bank_scope}, window {profile.window_size}")
    if profile.detection_kind == "unknown":
        out.status = "inconclusive"


def _family(config: DeviceConfig, requested: Optional[str]) -> str:
    if requested:
        return requested
    try:
        return best_params(config.trr.label)["family"]
    except TrrSimError:
        return "plain_double_sided"


def _parse_range(text: str) -> range:
    try:
        parts = [int(p) for p in text.split(":")]
        lo, hi = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else 1
    except (ValueError, IndexError):
        raise InvalidConfigError("sweep", f"'{text}' is not LO:HI[:STEP]") from None
    if step < 1 or hi < lo:
        raise InvalidConfigError("sweep", f"'{text}' is an empty range")
    return range(lo, hi + 1, step)


def run_attack(m: RunManifest, out: RunOutput):
    config = m.device_config()
    scale = _scale(m)
    device = new_device(config)
    family = _family(config, m.options.get("family"))
    periods = m.options.get("periods") or scale.attack_periods
    if m.options.get("sweep"):
        curve = sweep_hammers(device, family, _parse_range(m.options["sweep"]),
                              victims=m.options.get("positions") or scale.sweep_victims,
                              periods=periods, processes=m.jobs)
        for point in curve:
            out.record("sweep_point", point.to_record())
        out.table("sweep.csv", ["hammers", "median", "q1", "q3"],
                  [[p.hammers, p.median, p.q1, p.q3] for p in curve])
        peak = max(curve, key=lambda p: p.median)
        out.line(f"{family} sweep: peak median {peak.median} at {peak.hammers} hammers")
        return
    if m.options.get("positions"):
        positions = victim_positions(config, m.options["positions"])
    else:
        positions = bank_positions(config, scale.scan_stride)
    flips = scan_positions(device, family, None, positions, periods, m.jobs)
    for victim, n in flips.items():
        out.record("victim", {"family": family, "victim": victim, "flips": n})
    share = 100.0 * sum(1 for n in flips.values() if n) / len(flips)
    out.line(f"{family}: {share:.1f}% of {len(flips)} victim rows flipped, {sum(flips.values())} flips")


def _parse_histogram(text: str) -> ChunkHistogram:
    counts = {}
    for item in text.split(","):
        try:
            k, n = item.split(":")
            counts[int(k)] = int(n)
        except ValueError:
            raise InvalidConfigError("synthetic", f"'{item}' is not K:N") from None
    return ChunkHistogram(dict(sorted(counts.items())))


def _attack_report(m: RunManifest) -> BitFlipReport:
    config = m.device_config()
    scale = _scale(m)
    family = _family(config, m.options.get("family"))
    params = default_params(config, family)
    duration = attack_refs(config, m.options.get("periods") or scale.attack_periods)
    flips, rows = set(), set()
    for victim in victim_positions(config, m.options.get("positions") or scale.sweep_victims):
        report = execute(new_device(config), pattern_for(config, family, victim, params), duration)
        flips.update(report.flips)
        rows.update(report.rows_read)
    return BitFlipReport(family, dict(params), 0, duration, tuple(sorted(rows)), tuple(sorted(flips)))


def run_ecc_report(m: RunManifest, out: RunOutput):
    pins = 8
    if m.options.get("synthetic"):
        histogram = _parse_histogram(m.options["synthetic"])
    else:
        pins = m.device_config().pins
        histogram = chunk_histogram(_attack_report(m))
    parity = rs_parity_needed(histogram.max_flips)
    impact = ecc_impact_report(histogram, default_specs(pins, histogram.max_flips))
    out.record("histogram", histogram.to_record())
    for name, counts in impact.items():
        out.record("ecc_impact", {"code": name, **counts})
    out.record("rs_parity_needed", {"max_flips_per_chunk": histogram.max_flips, "parity_symbols": parity})
    out.table("histogram.csv", ["flips_per_chunk", "chunks"], sorted(histogram.counts.items()))
    out.line(f"{histogram.total_flips} flips over {sum(histogram.counts.values())} chunks "
             f"(y axis log scale); RS parity needed: {parity}")
    for name, counts in impact.items():
        out.line(f"  {name}: {counts['corrected']} corrected, {counts['detected']} detected, "
                 f"{counts['silent']} silent")


def _span(value):
    return value if isinstance(value, str) or value is None else tuple(sorted(value))


def run_acceptance(m: RunManifest, out: RunOutput):
    config = m.device_config()
    scale = _scale(m)
    device = new_device(config)
    truth = device.ground_truth()
    checks = []

    def check(name: str, expected, observed):
        passed = expected == observed
        checks.append(passed)
        out.record("check", {"check": name, "expected": expected, "observed": observed, "passed": passed})

    profile = TrrReverseEngineer(device, scale).full_profile()
    check("regular_refresh_period", truth.regular_refresh_period, profile.regular_refresh_period_refs)
    check("detection_kind", truth.variant, profile.detection_kind)
    if truth.variant != "none":
        check("trr_to_ref_ratio", truth.ratio, profile.trr_to_ref_ratio)
        check("neighbor_span", _span(truth.neighbors), _span(profile.neighbor_span))
        if truth.variant in ("counter", "sampling"):
            check("tracker_capacity", truth.capacity, profile.tracker_capacity)
        check("per_bank_scope", truth.per_bank, profile.per_bank_scope)
        if truth.variant == "window":
            check("window_size", truth.window_size, profile.window_size)

    if config.name in EVASION_EXCLUDED_PRESETS or truth.variant == "none":
        out.line(f"evasion not evaluated on {config.name} ({truth.label})")
    else:
        positions = victim_positions(config, scale.sweep_victims)
        periods = max(scale.attack_periods, ACCEPTANCE_PERIODS)
        for plain in ("plain_single_sided", "plain_double_sided"):
            flips = scan_positions(device, plain, {}, positions, periods, m.jobs)
            check(f"{plain}_flips", 0, sum(flips.values()))
        family = _family(config, None)
        flips = scan_positions(device, family, None, positions, periods, m.jobs)
        share = 100.0 * sum(1 for n in flips.values() if n) / len(flips)
        check(f"{family}_vulnerable_share>={EVASION_SHARE:g}", True, share >= EVASION_SHARE)

    out.line(f"{sum(checks)}/{len(checks)} checks passed on {config.name}")
    if not all(checks):
        out.status = "failed"


HANDLERS = {
    "device": run_device,
    "scout": run_scout,
    "analyze": run_analyze,
    "reveng": run_reveng,
    "attack": run_attack,
    "ecc-report": run_ecc_report,
    "acceptance": run_acceptance,
}


def _store(m: RunManifest, out: RunOutput):
    from trrsim.database import configure_database
    from trrsim.services.runs import RunService

    configure_database(f"sqlite:///{Path(m.output_dir).resolve() / 'trrsim.db'}")
    run_id = RunService().record_run(
        verb=m.verb, preset=m.config_path or m.preset, seed=m.seed, profile=m.profile,
        status=out.status, summary={"lines": out.summary}, records=out.records,
    )
    logger.info(f"Run stored as {run_id}")


def run(manifest: RunManifest) -> int:
    """Execute one manifest; returns the process exit code."""
    out = RunOutput(manifest.run_dir)
    try:
        HANDLERS[manifest.verb](manifest, out)
    except InconclusiveError as e:
        logger.warning(f"{manifest.verb} inconclusive: {e}")
        out.status = "inconclusive"
        out.line(f"inconclusive: {e}")
    except TrrSimError as e:
        logger.error(f"{manifest.verb} failed: {e}")
        out.status = "error"
        out.line(f"error: {e}")
    out.write()
    if manifest.store:
        _store(manifest, out)
    print(f"{manifest.verb} {manifest.name}: {out.status} -> {manifest.run_dir}")
    for text in out.summary:
        print(f"  {text}")
    return {"ok": EXIT_OK, "inconclusive": EXIT_INCONCLUSIVE}.get(out.status, EXIT_ERROR)


# Argument parsing ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group()
    source.add_argument("--preset", help="catalog preset, e.g. A0, B13, C12")
    source.add_argument("--config", dest="config_path", help="TOML device config (may name a preset)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--profile", choices=("desk", "paper"), default="desk")
    common.add_argument("--output", default="results", help="output directory (TRRSIM_OUTPUT_DIR overrides)")
    common.add_argument("--store", action="store_true", help="also record the run in <output>/trrsim.db")
    common.add_argument("--jobs", type=int, default=None, help="worker processes for sweeps and scans")

    parser = argparse.ArgumentParser(prog="trrsim", description=__doc__.splitlines()[0])
    verbs = parser.add_subparsers(dest="verb", required=True, metavar="verb")
    verbs.add_parser("device", parents=[common], help="describe a device")
    scout = verbs.add_parser("scout", parents=[common], help="profile retention row groups")
    scout.add_argument("--layout", default="R-R")
    scout.add_argument("--groups", type=int, default=1)
    scout.add_argument("--bank", type=int, default=0)
    analyze = verbs.add_parser("analyze", parents=[common], help="run one TRR analyzer experiment")
    analyze.add_argument("--layout", default="R-R")
    analyze.add_argument("--hammers", type=int, default=5000)
    analyze.add_argument("--mode", choices=("cascaded", "interleaved"), default="cascaded")
    analyze.add_argument("--dummies", type=int, default=0)
    analyze.add_argument("--dummy-hammers", type=int, default=0)
    analyze.add_argument("--refs-per-round", type=int, default=1)
    analyze.add_argument("--rounds", type=int, default=1)
    verbs.add_parser("reveng", parents=[common], help="blind TRR reverse engineering")
    for name, text in (("attack", "run an access pattern"), ("ecc-report", "ECC impact of attack flips")):
        p = verbs.add_parser(name, parents=[common], help=text)
        p.add_argument("--family", choices=FAMILIES)
        p.add_argument("--positions", type=int)
        p.add_argument("--periods", type=int)
        if name == "attack":
            p.add_argument("--sweep", metavar="LO:HI[:STEP]", help="sweep the hammer knob")
        else:
            p.add_argument("--synthetic", metavar="K:N,...", help="flips-per-chunk histogram instead of an attack")
    verbs.add_parser("acceptance", parents=[common], help="check recovery and evasion against ground truth")
    return parser


def manifest_from_args(args: argparse.Namespace) -> RunManifest:
    base = {"verb", "preset", "config_path", "seed", "profile", "output", "store", "jobs"}
    options = {k: v for k, v in vars(args).items() if k not in base and v is not None}
    return RunManifest(
        verb=args.verb,
        preset=args.preset,
        config_path=args.config_path,
        seed=args.seed,
        output_dir=Config.output_dir(args.output),
        profile=args.profile,
        store=args.store,
        jobs=args.jobs,
        options=options,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    manifest = manifest_from_args(args)
    configure_logging(os.path.join(manifest.output_dir, "logs"))
    logger.info(f"Running {manifest.verb} on {manifest.name} (seed {manifest.seed}, {manifest.profile})")
    return run(manifest)


if __name__ == "__main__":
    sys.exit(main())
