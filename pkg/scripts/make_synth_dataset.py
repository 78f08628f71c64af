#!/usr/bin/env python3
"""Generate the synthetic fixture datasets used in the experiments.

Writes one dataset per preset under the output root, each with frames,
ground-truth masks, key masks, analytic flow files, and a timeline.
"""

import argparse
import sys

from labelflow.cli import main as labelflow_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/synth", help="output root")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--frames", type=int, default=31)
    parser.add_argument("--key-period", type=int, default=30)
    args = parser.parse_args()

    for preset in ("translating", "occlusion"):
        rc = labelflow_main([
            "synth", "--out", f"{args.out}/{preset}", "--preset", preset,
            "--seed", str(args.seed), "--frames", str(args.frames),
            "--key-period", str(args.key_period)])
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
