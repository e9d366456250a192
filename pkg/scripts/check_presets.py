#!/usr/bin/env python3
"""
Check that every catalog preset builds a valid device.

Builds each preset under the chosen scale profile, instantiates the device and
compares the ground-truth TRR profile with the catalog's variant label. Tuned
attack parameters are checked against the ACT budget as well.

Usage:
    python3 scripts/check_presets.py                    # desk profile
    python3 scripts/check_presets.py --profile paper    # paper-scale geometry
"""

import sys
import os

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from trrsim.attacks import default_params, pattern_for, victim_positions
from trrsim.device import new_device
from trrsim.errors import TrrSimError
from trrsim.presets import best_params, build_config, list_presets, variant_label


def check_presets(profile="desk"):
    """Build every preset; return the list of (preset, problem) pairs."""
    print(f"\nPreset Check ({profile} profile):")
    print("=" * 70)

    problems = []
    for preset in list_presets():
        label = variant_label(preset)
        try:
            config = build_config(preset, profile)
            truth = new_device(config).ground_truth()
            if truth.label != label:
                problems.append((preset, f"ground truth label {truth.label} != catalog {label}"))
            if label != "none":
                family = best_params(label)["family"]
                victim = victim_positions(config, 1)[0]
                pattern_for(config, family, victim, default_params(config, family))
        except TrrSimError as e:
            problems.append((preset, str(e)))
            print(f"  {preset:<5} {label:<8} FAILED: {e}")
            continue
        print(f"  {preset:<5} {label:<8} ok  hc_first={config.disturbance.hc_first:<7} "
              f"banks={config.banks} period={config.regular_refresh.period}")

    print("=" * 70)
    if problems:
        print(f"{len(problems)} preset(s) with problems")
        for preset, problem in problems:
            print(f"  {preset}: {problem}")
    else:
        print("All presets build.")
    return problems


if __name__ == '__main__':
    profile = "paper" if "--profile" in sys.argv and "paper" in sys.argv else "desk"
    sys.exit(1 if check_presets(profile) else 0)
