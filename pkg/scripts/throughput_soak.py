#!/usr/bin/env python3
"""Pipeline throughput soak: pace each converter data rate for a few seconds
and report produced samples, drops, and worst block jitter.

Usage: python scripts/throughput_soak.py [--seconds 5]
"""

import argparse

from peeg import synth
from peeg.acquisition import Pipeline, SimulatorBackend
from peeg.synth import ChannelPlan, Scenario


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seconds", type=float, default=5.0)
    args = parser.parse_args()

    plans = tuple(ChannelPlan(label, 4.0) for label in synth.EEG_LABELS)
    print(f"{'rate':>6} {'block':>6} {'blocks/s':>8} {'produced':>9} "
          f"{'dropped':>8} {'jitter_ms':>9}")
    for fs in (250, 500, 1000, 2000, 4000, 8000, 16000):
        scenario = Scenario(args.seconds, fs, 0, plans, ())
        block_len = max(1, fs // 10)
        pipeline = Pipeline(SimulatorBackend(scenario), block_len=block_len, paced=True)
        sub = pipeline.subscribe(capacity=1024)
        pipeline.start()
        received = sum(b.n_samples for b in sub)
        stats = pipeline.stats()
        print(
            f"{fs:6d} {block_len:6d} {fs / block_len:8.1f} {received:9d} "
            f"{stats.dropped_samples:8d} {stats.jitter_ns / 1e6:9.2f}"
        )


if __name__ == "__main__":
    main()
