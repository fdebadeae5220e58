#!/usr/bin/env python3
"""Generate a corpus of procedural training scenes as PPM files."""

import argparse
from pathlib import Path

from salientfeat.imageio import write_image
from salientfeat.synth import synthetic_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--count", type=int, default=24)
    parser.add_argument("--size", type=int, default=88)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, scene in enumerate(synthetic_corpus(args.count, args.size, args.seed)):
        write_image(out / f"scene{i:03d}.ppm", scene)
    print(f"wrote {args.count} scenes of {args.size}x{args.size} to {out}")


if __name__ == "__main__":
    main()
