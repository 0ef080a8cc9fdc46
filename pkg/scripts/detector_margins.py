#!/usr/bin/env python3
"""Artifact-detector margin study: blink/chew recovery counts and false
positives as event amplitudes shrink toward the noise floor.

Usage: python scripts/detector_margins.py [--seeds 10]
"""

import argparse

from peeg import dsp, synth


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=10)
    args = parser.parse_args()

    print(f"{'blink_uv':>8} {'chew_uv':>8} {'blinks==9':>9} {'chews==10':>9}")
    for scale in (0.1, 0.2, 0.4, 0.7, 1.0):
        blink_uv, chew_uv = 120.0 * scale, 80.0 * scale
        blink_ok = chew_ok = 0
        for seed in range(args.seeds):
            scenario = synth.fig7_scenario(seed=seed, blink_uv=blink_uv, chew_uv=chew_uv)
            data, _ = synth.render(scenario)
            blink_ok += len(dsp.detect_blinks(data[0], scenario.fs)) == 9
            chew_ok += len(dsp.detect_chews(data[0], scenario.fs)) == 10
        print(f"{blink_uv:8.1f} {chew_uv:8.1f} {blink_ok:6d}/{args.seeds} "
              f"{chew_ok:6d}/{args.seeds}")


if __name__ == "__main__":
    main()
