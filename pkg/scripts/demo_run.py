#!/usr/bin/env python3
"""End-to-end demo: generate a synthetic trace, replay it through the
pipeline with stub ports, and print the judged metrics.

Usage: python scripts/demo_run.py [--scenes N] [--seed S] [--out DIR]
"""

import argparse
import json
import tempfile

from streammem.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenes", type=int, default=4)
    parser.add_argument("--scene-duration", type=float, default=15.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--preset", default="base")
    parser.add_argument("--out", default="out/demo")
    args = parser.parse_args()

    with tempfile.NamedTemporaryFile(suffix=".jsonl", delete=False) as tmp:
        trace_path = tmp.name
    rc = cli_main([
        "gen-trace", trace_path,
        "--scenes", str(args.scenes),
        "--scene-duration", str(args.scene_duration),
        "--seed", str(args.seed),
    ])
    if rc != 0:
        return rc
    rc = cli_main([
        "run", trace_path,
        "--preset", args.preset,
        "--seed", str(args.seed),
        "--out", args.out,
    ])
    if rc != 0:
        return rc

    with open(f"{args.out}/report.json") as fh:
        report = json.load(fh)
    print(json.dumps(report["metrics"], indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
