#!/usr/bin/env python3
"""Full method x rank ablation on the default phantom.

Simulates the ground-truth volume, adds sigma=0.1 noise, then scores
truncation / median / regression denoising at K=1..5. With the default
3000 training iterations this takes hours on a small machine; pass
--iterations 1000 for the quicker setting used by the automated checks.
"""

import argparse
import os
import sys

from cestden.cli import main as cli


def sh(*argv) -> None:
    argv = [str(a) for a in argv]
    print("+ cestden " + " ".join(argv))
    rc = cli(argv)
    if rc != 0:
        sys.exit(rc)


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/ablation", help="output directory")
    ap.add_argument("--sigma", type=float, default=0.1)
    ap.add_argument("--noise-seed", type=int, default=2)
    ap.add_argument("--iterations", type=int, default=3000)
    ap.add_argument("--ranks", default="1,2,3,4,5")
    ap.add_argument("--methods", default="truncation,median,iris")
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    return ap.parse_args()


def main():
    args = parse_args()
    os.makedirs(args.out, exist_ok=True)
    truth = os.path.join(args.out, "phantom", "ground_truth.cstv")
    noisy = os.path.join(args.out, "noisy.cstv")
    table = os.path.join(args.out, "ablation.csv")

    sh("simulate", "--threads", args.threads, "--out", os.path.join(args.out, "phantom"))
    sh("noise", "--in", truth, "--sigma", args.sigma, "--seed", args.noise_seed,
       "--threads", args.threads, "--out", noisy)
    sh("ablate", "--truth", truth, "--noisy", noisy,
       "--ranks", args.ranks, "--methods", args.methods,
       "--iterations", args.iterations, "--sigma", args.sigma,
       "--threads", args.threads, "--out", table)

    print()
    with open(table, "r", encoding="utf-8") as f:
        for line in f:
            cells = line.rstrip("\n").split(",")
            print("  ".join(f"{c:>12}" for c in cells))
    print(f"\nwrote {table}")


if __name__ == "__main__":
    main()
