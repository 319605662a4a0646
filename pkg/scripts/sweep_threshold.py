#!/usr/bin/env python3
"""Sweep the motion-gate threshold t over a generated trace and print the
kept-frame ratio / accuracy curve (the knob that trades recall for compute).

Usage: python scripts/sweep_threshold.py [--values 0.1,0.2,...] [--seed S]
"""

import argparse

from streammem.frame_gate import GateConfig
from streammem.harness import gen_trace, sweep
from streammem.memory_core import PRESETS
from streammem.ports import stub_ports


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--values", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    parser.add_argument("--scenes", type=int, default=4)
    parser.add_argument("--scene-duration", type=float, default=15.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="optional CSV output path")
    args = parser.parse_args()

    trace = gen_trace(
        num_scenes=args.scenes, scene_duration=args.scene_duration, seed=args.seed
    )
    values = [float(v) for v in args.values.split(",")]
    rows = sweep(
        trace, "t", values, PRESETS["base"], GateConfig(), stub_ports(),
        out_path=args.out,
    )
    print(f"{'t':>6} {'kept_ratio':>11} {'accuracy':>9} {'rpd_mean':>9}")
    for row in rows:
        print(
            f"{row['value']:>6.2f} {row['kept_ratio']:>11.3f} "
            f"{row['accuracy']:>9.3f} {row['rpd_mean']:>9.4f}"
        )
    if args.out:
        print(f"csv written to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
