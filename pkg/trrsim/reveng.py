"""Blind reverse engineering of a device's TRR mechanism.

Every test here sees the device only through commands and the TRR Analyzer:
probe survivals attributed to TRR after the learned regular-refresh schedule is
taken out. The REF counter is known (the controller issues the REFs) and the
logical/physical row mapping is assumed known; the device's ground truth is
never consulted.
"""
from __future__ import annotations

import logging
from collections import Counter
from functools import reduce
from math import gcd
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import attrs

from trrsim.analyzer import (
    ExperimentConfig,
    ExperimentResult,
    RegularSchedule,
    issue_refs,
    learn_regular_schedule,
    reset_trr_state,
    run_experiment,
)
from trrsim.device import DramDevice
from trrsim.errors import (
    InconclusiveError,
    NoTrrDetectedError,
    NotApplicableError,
    NotASamplerError,
    NotWindowBasedError,
)
from trrsim.presets import ScaleProfile, load_profile
from trrsim.scout import ProfilingConfig, RowGroup, RowGroupLayout, find_row_groups

logger = logging.getLogger(__name__)

Span = Union[str, Tuple[int, ...]]

PAIR_LAYOUT = RowGroupLayout("R-R")
SPAN_LAYOUT = RowGroupLayout("RRR-RRR")

RATIO_GROUPS = 16
RATIO_HAMMERS = 5000
# enough single-REF iterations to see several events at ratios up to 17
RATIO_ITERATIONS = 72
DEFERRAL_TRIALS = 3
SPAN_EVENTS = 6
KIND_X_HAMMERS = 5000
KIND_Y_HAMMERS = 3000
CAPACITY_HAMMERS = 100
EVICTION_FIRST_HAMMERS = 50
EVICTION_GROUPS = 17
RESET_X_HAMMERS = 2000
RESET_Y_HAMMERS = 3000
RESET_ITERATIONS = 32
RESET_SHARE = 0.25
PERSISTENCE_HAMMERS = 5000
DECOY_HAMMERS = 16384
WINDOW_STEP_MIN = 64
WINDOW_STEP_MAX = 16384
WINDOW_X_HAMMERS = 256
# idle TRR-capable REFs that zero every counter of a table up to capacity_max entries
DRAIN_CAPABLE_REFS = 64
# largest row distance used to learn rows-per-REF of regular refresh
FAR_ROW_DISTANCE = 512


@attrs.define
class InferredTrrProfile:
    """What the pipeline learned. ``None`` fields are unknown."""

    trr_to_ref_ratio: Optional[int] = None
    deferrable: Optional[bool] = None
    neighbor_span: Optional[Span] = None
    detection_kind: str = "unknown"
    tracker_capacity: Optional[int] = None
    per_bank_scope: Optional[bool] = None
    evict_policy: Optional[str] = None
    reset_on_detect: Optional[bool] = None
    entry_persistence: Optional[str] = None
    sampling_guarantee: Optional[int] = None
    window_size: Optional[int] = None
    regular_refresh_period_refs: Optional[int] = None
    regular_rows_per_ref: Optional[int] = None
    evidence: List[Dict[str, Any]] = attrs.field(factory=list)

    @property
    def ratio_label(self) -> Optional[str]:
        if self.trr_to_ref_ratio is None:
            return None
        if self.deferrable:
            return f"deferred({self.trr_to_ref_ratio})"
        return str(self.trr_to_ref_ratio)

    def to_record(self) -> dict:
        record = attrs.asdict(self, filter=lambda a, _: a.name != "evidence")
        if isinstance(self.neighbor_span, tuple):
            record["neighbor_span"] = list(self.neighbor_span)
        record["ratio_label"] = self.ratio_label
        return record


class TrrReverseEngineer:
    """Runs the reverse-engineering tests against one device, sharing probes and schedule."""

    def __init__(self, device: DramDevice, profile: Union[str, ScaleProfile] = "desk", bank: int = 0):
        self.device = device
        self.profile = load_profile(profile) if isinstance(profile, str) else profile
        self.bank = bank
        self.alt_bank = (bank + 1) % device.config.banks
        self.result = InferredTrrProfile()
        self.schedule: Optional[RegularSchedule] = None
        self.phase: Optional[int] = None
        self.pair_groups: List[RowGroup] = []
        self.span_groups: List[RowGroup] = []
        self.alt_group: Optional[RowGroup] = None
        self._kind_done = False

    # Bookkeeping ---------------------------------------------------------------------------------

    def _note(self, test: str, verdict: Any, **details):
        entry = {"test": test, "verdict": verdict, **details}
        self.result.evidence.append(entry)
        logger.info(f"Reveng {test}: {verdict} {details if details else ''}".rstrip())

    @property
    def ratio(self) -> int:
        if self.result.trr_to_ref_ratio is None:
            self.find_trr_ref_ratio()
        return self.result.trr_to_ref_ratio

    def _occupied(self) -> List[Tuple[int, int]]:
        groups = self.pair_groups + self.span_groups + ([self.alt_group] if self.alt_group else [])
        return [(g.bank, r) for g in groups for r in range(*g.footprint)]

    def _reset(self, banks: Sequence[int] = ()):
        reset_trr_state(self.device, self._occupied(), self.profile.reset_periods, banks=banks or (self.bank,))

    def _run(self, groups: Sequence[RowGroup], aggressors=(), **kwargs) -> ExperimentResult:
        cfg = ExperimentConfig(groups=groups, aggressors=aggressors, **kwargs)
        return run_experiment(self.device, cfg, self.schedule)

    @staticmethod
    def _detected(result: ExperimentResult, group: RowGroup, both: bool = False) -> bool:
        flags = [result.verdict(r, group.bank).attribution == "TRR" for r in group.rows]
        return all(flags) if both else any(flags)

    def _quiet_start(self, rows: Sequence[int], refs: int):
        """Idle until the next ``refs`` REFs regularly refresh none of ``rows``."""
        s = self.schedule
        if s is None:
            return
        start = self.device.ref_count
        targets = {(s.origin + row // s.rows_per_ref) % s.period for row in rows}
        for delay in range(s.period):
            first = start + delay
            if all((t - first) % s.period >= refs for t in targets):
                issue_refs(self.device, delay)
                return
        logger.debug(f"No regular-refresh-free stretch of {refs} REFs for {len(rows)} probes")

    def _drain(self):
        """Idle REFs until leftover tracker entries hold no activations."""
        issue_refs(self.device, DRAIN_CAPABLE_REFS * self.ratio)

    def _refs_to_next_capable(self) -> int:
        """REFs to issue so that the last one is the next TRR-capable REF."""
        k = self.ratio
        return (self.phase - self.device.ref_count) % k + 1

    # Probes and regular refresh ------------------------------------------------------------------

    def scout(self):
        p = self.profile
        span = find_row_groups(self.device, ProfilingConfig(
            (0, p.scout_rows), SPAN_LAYOUT, bank=self.bank, consistency_checks=p.consistency_checks,
        ))
        # one even and one odd aggressor if available
        by_parity: Dict[int, RowGroup] = {}
        for g in span:
            by_parity.setdefault(g.gap_rows[0] % 2, g)
        self.span_groups = list(by_parity.values())
        taken = [r for g in self.span_groups for r in range(*g.footprint)]
        self.pair_groups = find_row_groups(self.device, ProfilingConfig(
            (0, p.scout_rows), PAIR_LAYOUT, bank=self.bank, groups_needed=EVICTION_GROUPS + 1,
            consistency_checks=p.consistency_checks, exclude=taken,
        ))
        self._note("scout", f"{len(self.pair_groups)} R-R, {len(self.span_groups)} RRR-RRR groups",
                   retention_ms=self.pair_groups[0].retention_ms)

    def _far_row(self, anchor: int) -> Optional[int]:
        rows = [r for g in self.pair_groups for r in g.rows if 0 < r - anchor <= FAR_ROW_DISTANCE]
        return max(rows) if rows else None

    def learn_schedule(self) -> RegularSchedule:
        if not self.pair_groups:
            self.scout()
        self._reset()
        group = self.pair_groups[0]
        self.schedule = learn_regular_schedule(self.device, group, far_row=self._far_row(group.rows[0]))
        self.result.regular_refresh_period_refs = self.schedule.period
        self.result.regular_rows_per_ref = self.schedule.rows_per_ref
        self._note("regular refresh", self.schedule.period, rows_per_ref=self.schedule.rows_per_ref,
                   origin=self.schedule.origin)
        return self.schedule

    def prepare(self):
        if self.schedule is None:
            self.learn_schedule()

    # Tests applicable to every mechanism ---------------------------------------------------------

    def find_trr_ref_ratio(self) -> int:
        """Ratio = gcd of REF-index gaps between TRR events over single-REF iterations."""
        self.prepare()
        groups = self.pair_groups[:RATIO_GROUPS]
        aggressors = [(g.gap_rows[0], RATIO_HAMMERS) for g in groups]
        events = []
        for _ in range(RATIO_ITERATIONS):
            result = self._run(groups, aggressors, refs_per_round=1)
            if result.trr_rows(self.bank):
                events.append(result.ref_start)
        if len(events) < 2:
            self._note("trr ratio", "no TRR", events=events)
            raise NoTrrDetectedError(f"{len(events)} TRR events in {RATIO_ITERATIONS} single-REF iterations")
        ratio = reduce(gcd, (b - a for a, b in zip(events, events[1:])))
        self.phase = events[-1] % ratio
        self.result.trr_to_ref_ratio = ratio
        self._note("trr ratio", ratio, phase=self.phase, events=events)
        return ratio

    def test_deferral(self) -> bool:
        """Hammer after a long idle stretch and REF once, off the TRR-capable phase."""
        k = self.ratio
        if k == 1:
            self.result.deferrable = False
            self._note("deferral", False, reason="every REF is TRR-capable")
            return False
        group = self.pair_groups[0]
        hits = 0
        for _ in range(DEFERRAL_TRIALS):
            r = self.device.ref_count
            issue_refs(self.device, 2 * k + (self.phase + 1 - r - 2 * k) % k)
            result = self._run([group], [(group.gap_rows[0], RATIO_HAMMERS)], refs_per_round=1)
            hits += self._detected(result, group)
        deferrable = hits * 2 > DEFERRAL_TRIALS
        self.result.deferrable = deferrable
        self._note("deferral", deferrable, detections=hits, trials=DEFERRAL_TRIALS)
        return deferrable

    def find_neighbor_span(self) -> Span:
        """Mode over TRR events of the probe offsets refreshed around a hammered row."""
        self.prepare()
        if not self.span_groups:
            raise InconclusiveError("neighbor span", "no RRR-RRR probe group")
        k = self.ratio
        self._reset()
        tokens: Counter = Counter()
        for group in self.span_groups:
            a = group.gap_rows[0]
            seen = 0
            for _ in range(8 * k):
                result = self._run([group], [(a, RATIO_HAMMERS)], refs_per_round=1)
                survivors = sorted(result.trr_rows(self.bank))
                if not survivors:
                    continue
                tokens["pair" if survivors == [a ^ 1] else tuple(r - a for r in survivors)] += 1
                seen += 1
                if seen >= SPAN_EVENTS:
                    break
        if not tokens:
            raise InconclusiveError("neighbor span", "no TRR event around the span probes")
        span = tokens.most_common(1)[0][0]
        self.result.neighbor_span = span
        self._note("neighbor span", span, votes={str(t): n for t, n in tokens.items()})
        return span

    def detect_kind(self) -> str:
        """Hammer X then Y and the reverse; see which one the TRR refreshes.

        Counter tracking picks the larger count in both orders, window tracking
        the first-hammered row and sampling the last-hammered one. The
        aggressors are not written beforehand so that the hammer order is the
        first-ACT order.
        """
        k = self.ratio
        gx, gy = self.pair_groups[:2]
        x, y = gx.gap_rows[0], gy.gap_rows[0]
        votes: Counter = Counter()
        for _ in range(self.profile.kind_trials):
            self._reset()
            first = self._run([gx, gy], [(x, KIND_X_HAMMERS), (y, KIND_Y_HAMMERS)],
                              refs_per_round=6 * k, aggressor_data=None)
            second = self._run([gx, gy], [(y, KIND_Y_HAMMERS), (x, KIND_X_HAMMERS)],
                               refs_per_round=6 * k, aggressor_data=None)
            votes[{
                (True, True): "counter",
                (True, False): "window",
                (False, True): "sampling",
            }.get((self._detected(first, gx), self._detected(second, gx)), "unknown")] += 1
        kind, n = votes.most_common(1)[0]
        if n * 2 <= self.profile.kind_trials:
            kind = "unknown"
        self.result.detection_kind = kind
        self._kind_done = True
        self._note("detection kind", kind, votes=dict(votes))
        return kind

    @property
    def kind(self) -> str:
        if not self._kind_done:
            self.detect_kind()
        return self.result.detection_kind

    def test_scope(self) -> bool:
        """Hammer X in one bank, then Y in another: X still refreshed means per-bank tracking."""
        k = self.ratio
        if self.device.config.banks < 2:
            raise InconclusiveError("scope", "device has a single bank")
        if self.alt_group is None:
            self.alt_group = find_row_groups(self.device, ProfilingConfig(
                (0, self.profile.scout_rows // 4), PAIR_LAYOUT, bank=self.alt_bank,
                consistency_checks=self.profile.consistency_checks,
            ))[0]
        group = self.pair_groups[min(3, len(self.pair_groups) - 1)]
        alt = self.alt_group
        detected = 0
        for _ in range(self.profile.kind_trials):
            self._reset((self.bank, self.alt_bank))
            result = self._run(
                [group, alt],
                [(group.gap_rows[0], KIND_X_HAMMERS, group.bank), (alt.gap_rows[0], KIND_X_HAMMERS, alt.bank)],
                refs_per_round=2 * k,
            )
            detected += self._detected(result, group)
        per_bank = detected * 2 > self.profile.kind_trials
        self.result.per_bank_scope = per_bank
        self._note("scope", "per-bank" if per_bank else "shared", detections=detected)
        return per_bank

    # Counter-based -------------------------------------------------------------------------------

    def _require(self, test: str, *kinds: str):
        if self.kind not in kinds:
            raise NotApplicableError(test, self.kind)

    def _all_detected(self, groups: Sequence[RowGroup], aggressors) -> bool:
        k = self.ratio
        refs = 48 * k
        self._reset()
        self._drain()
        self._quiet_start([r for g in groups for r in g.rows], refs)
        result = self._run(groups, aggressors, refs_per_round=refs)
        return all(self._detected(result, g, both=True) for g in groups)

    def find_tracker_capacity(self) -> Optional[int]:
        """Largest N for which N aggressors hammered once are all eventually refreshed."""
        kind = self.kind
        if kind == "sampling":
            self.result.tracker_capacity = 1
            self._note("tracker capacity", 1, reason="only the last-hammered row is refreshed")
            return 1
        if kind == "window":
            self._note("tracker capacity", "unknown", reason="window tracking has no fixed capacity")
            return None
        if kind not in ("counter", "unknown"):
            raise NotApplicableError("tracker capacity", kind)

        upper = min(self.profile.capacity_max, len(self.pair_groups))

        def fits(n: int) -> bool:
            groups = self.pair_groups[:n]
            ok = self._all_detected(groups, [(g.gap_rows[0], CAPACITY_HAMMERS) for g in groups])
            logger.debug(f"Capacity probe N={n}: {'all detected' if ok else 'missed'}")
            return ok

        lo, hi = 0, upper
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if fits(mid):
                lo = mid
            else:
                hi = mid - 1
        if lo == 0:
            raise InconclusiveError("tracker capacity", "a single aggressor was never detected")
        self.result.tracker_capacity = lo
        self._note("tracker capacity", lo, upper=upper, lower_bound=lo == upper)
        return lo

    def test_eviction_policy(self) -> str:
        """A light first aggressor followed by a table's worth of heavier ones."""
        self._require("eviction policy", "counter")
        groups = self.pair_groups[:EVICTION_GROUPS]
        if len(groups) < EVICTION_GROUPS:
            raise InconclusiveError("eviction policy", f"needs {EVICTION_GROUPS} probe groups")
        first = groups[0]
        aggressors = [(first.gap_rows[0], EVICTION_FIRST_HAMMERS)]
        aggressors += [(g.gap_rows[0], CAPACITY_HAMMERS) for g in groups[1:]]
        k = self.ratio
        hits = 0
        for _ in range(self.profile.eviction_trials):
            self._reset()
            self._drain()
            self._quiet_start([r for g in groups for r in g.rows], 48 * k)
            result = self._run(groups, aggressors, refs_per_round=48 * k)
            hits += self._detected(result, first, both=True)
        policy = "other" if hits else "min-counter"
        self.result.evict_policy = policy
        self._note("eviction policy", policy, first_detected=hits, trials=self.profile.eviction_trials)
        return policy

    def test_reset_on_detect(self) -> bool:
        """X and Y race every iteration; X only wins if detected counters restart."""
        if self.kind in ("sampling", "window", "none"):
            raise NotApplicableError("reset on detect", self.kind)
        k = self.ratio
        base = min(EVICTION_GROUPS - 1, len(self.pair_groups) - 2)
        gx, gy = self.pair_groups[base:base + 2]
        aggressors = [(gx.gap_rows[0], RESET_X_HAMMERS), (gy.gap_rows[0], RESET_Y_HAMMERS)]
        self._reset()
        x_hits = y_hits = 0
        for _ in range(RESET_ITERATIONS):
            result = self._run([gx, gy], aggressors, refs_per_round=k)
            x_hits += self._detected(result, gx)
            y_hits += self._detected(result, gy)
        resets = x_hits > 0 and x_hits / (x_hits + y_hits) >= RESET_SHARE
        self.result.reset_on_detect = resets
        self._note("reset on detect", resets, x_detections=x_hits, y_detections=y_hits)
        return resets

    def test_entry_persistence(self) -> str:
        """Hammer X once, then watch for X refreshes over many idle REFs."""
        kind = self.kind
        if kind not in ("counter", "sampling", "unknown"):
            raise NotApplicableError("entry persistence", kind)
        k = self.ratio
        group = self.pair_groups[min(2, len(self.pair_groups) - 1)]
        iterations = max(4, self.profile.persistence_refs // k)
        self._reset()
        events = []
        run = 0
        for i in range(iterations):
            aggressors = [(group.gap_rows[0], PERSISTENCE_HAMMERS)] if i == 0 else []
            result = self._run([group], aggressors, refs_per_round=k)
            if self._detected(result, group, both=True):
                events.append(i)
                run += 1
                if kind == "sampling" and run >= 3:
                    break
            else:
                run = 0
        if not events:
            raise InconclusiveError("entry persistence", "hammered row never refreshed")
        if kind == "sampling":
            label = "indefinite-until-resample" if run >= 3 else "cleared"
        else:
            label = "indefinite" if events[-1] >= iterations * 3 // 4 else "cleared"
        self.result.entry_persistence = label
        self._note("entry persistence", label, events=len(events), last_event=events[-1], iterations=iterations)
        return label

    # Sampling-based ------------------------------------------------------------------------------

    def find_sampling_guarantee(self) -> int:
        """Minimal run length of X, after a decoy, that is sampled in every trial."""
        if self.kind != "sampling":
            raise NotASamplerError()
        group = self.pair_groups[min(4, len(self.pair_groups) - 1)]
        x = group.gap_rows[0]
        trials = self.profile.guarantee_trials

        def always(n: int) -> bool:
            for _ in range(trials):
                result = self._run([group], [(x, n)], dummy_rows=1, dummy_hammers=DECOY_HAMMERS,
                                   dummies_first=True, refs_per_round=self._refs_to_next_capable())
                if not self._detected(result, group):
                    return False
            return True

        lo, hi = 1, DECOY_HAMMERS
        if not always(hi):
            raise InconclusiveError("sampling guarantee", f"{hi} ACTs not always sampled")
        while lo < hi:
            mid = (lo + hi) // 2
            if always(mid):
                hi = mid
            else:
                lo = mid + 1
        self.result.sampling_guarantee = hi
        self._note("sampling guarantee", hi, trials=trials)
        return hi

    # Window-based --------------------------------------------------------------------------------

    def find_window_size(self) -> int:
        """ACTs after which a newly activated row is no longer recorded.

        Each trial empties the window with k idle REFs, then issues ``offset``
        dummy ACTs before hammering X. The probe writes are ACTs too and count
        towards the offset. The edge is bracketed by doubling and then bisected.
        """
        if self.kind != "window":
            raise NotWindowBasedError()
        k = self.ratio
        group = self.pair_groups[min(4, len(self.pair_groups) - 1)]
        x = group.gap_rows[0]
        writes = len(group.rows)

        def recorded(dummy_acts: int) -> bool:
            for _ in range(self.profile.window_trials):
                issue_refs(self.device, k)
                result = self._run([group], [(x, WINDOW_X_HAMMERS)], dummy_rows=1, dummy_hammers=dummy_acts,
                                   dummies_first=True, refs_per_round=k, aggressor_data=None)
                if self._detected(result, group):
                    return True
            return False

        lo, hi = 0, WINDOW_STEP_MIN
        while recorded(hi):
            lo, hi = hi, 2 * hi
            if hi > WINDOW_STEP_MAX:
                raise InconclusiveError("window size", f"X still refreshed after {lo} dummy ACTs")
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if recorded(mid):
                lo = mid
            else:
                hi = mid
        size = writes + lo + 1
        self.result.window_size = size
        self._note("window size", size, last_recorded_offset=lo, trials=self.profile.window_trials)
        return size

    # Full pipeline -------------------------------------------------------------------------------

    def _attempt(self, test):
        try:
            test()
        except InconclusiveError as e:
            self._note(e.test, "unknown", reason=e.detail)

    def full_profile(self) -> InferredTrrProfile:
        self.prepare()
        try:
            self.find_trr_ref_ratio()
        except NoTrrDetectedError:
            self.result.detection_kind = "none"
            self._kind_done = True
            return self.result
        self._attempt(self.test_deferral)
        self._attempt(self.find_neighbor_span)
        self._attempt(self.detect_kind)
        kind = self.result.detection_kind
        if kind == "counter":
            tests = [self.find_tracker_capacity, self.test_eviction_policy, self.test_reset_on_detect,
                     self.test_entry_persistence, self.test_scope]
        elif kind == "sampling":
            tests = [self.find_tracker_capacity, self.test_entry_persistence, self.test_scope,
                     self.find_sampling_guarantee]
        elif kind == "window":
            tests = [self.test_scope, self.find_window_size]
        else:
            tests = [self.test_scope]
        for test in tests:
            self._attempt(test)
        logger.info(f"Reveng profile of {self.device.config.name}: {self.result.to_record()}")
        return self.result


# Single-test entry points ----------------------------------------------------------------------

def _engineer(device: DramDevice, profile, probes: Optional[Sequence[RowGroup]] = None) -> TrrReverseEngineer:
    eng = TrrReverseEngineer(device, profile)
    if probes:
        eng.pair_groups = list(probes)
    return eng


def find_trr_ref_ratio(device: DramDevice, probes: Optional[Sequence[RowGroup]] = None,
                       profile: Union[str, ScaleProfile] = "desk") -> int:
    return _engineer(device, profile, probes).find_trr_ref_ratio()


def find_neighbor_span(device: DramDevice, profile: Union[str, ScaleProfile] = "desk") -> Span:
    return _engineer(device, profile).find_neighbor_span()


def find_tracker_capacity(device: DramDevice, profile: Union[str, ScaleProfile] = "desk") -> Optional[int]:
    return _engineer(device, profile).find_tracker_capacity()


def test_eviction_policy(device: DramDevice, profile: Union[str, ScaleProfile] = "desk") -> str:
    return _engineer(device, profile).test_eviction_policy()


def test_reset_on_detect(device: DramDevice, profile: Union[str, ScaleProfile] = "desk") -> bool:
    return _engineer(device, profile).test_reset_on_detect()


def test_entry_persistence(device: DramDevice, profile: Union[str, ScaleProfile] = "desk") -> str:
    return _engineer(device, profile).test_entry_persistence()


def find_sampling_guarantee(device: DramDevice, profile: Union[str, ScaleProfile] = "desk") -> int:
    return _engineer(device, profile).find_sampling_guarantee()


def find_window_size(device: DramDevice, profile: Union[str, ScaleProfile] = "desk") -> int:
    return _engineer(device, profile).find_window_size()


def full_profile(device: DramDevice, profile: Union[str, ScaleProfile] = "desk") -> InferredTrrProfile:
    return TrrReverseEngineer(device, profile).full_profile()


# keep pytest from collecting the test_* entry points when imported into test modules
for _fn in (test_eviction_policy, test_reset_on_detect, test_entry_persistence):
    _fn.__test__ = False
