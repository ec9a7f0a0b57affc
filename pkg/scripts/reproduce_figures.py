#!/usr/bin/env python3
"""Regenerate the level-set slices and trajectory plots for the bundled systems.

For every system this writes, under --out:
  <name>-base.json, <name>-cert.json   synthesised controller and certificate
  <name>-levelset.csv                  Psi on the configured 2-D slice
  <name>-trajectories.svg              safe/target contours with closed-loop runs
  <name>-sim.json                      outcome counts and monotonicity audit
"""
import argparse
import sys
from pathlib import Path

from reachstep.cli import main as cli


def run(argv):
    code = cli([str(a) for a in argv])
    if code:
        sys.exit(f"reachstep {' '.join(map(str, argv))} exited with {code}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("figures"))
    ap.add_argument("--n", type=int, default=20, help="trajectories per plot")
    ap.add_argument("systems", nargs="*", default=["example1", "dubins", "arm"])
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name in args.systems:
        o = args.out
        run(["synth", name, "--out", o / f"{name}-base.json"])
        run(["backstep", name, o / f"{name}-base.json", "--out", o / f"{name}-cert.json",
             "--grid-csv", o / f"{name}-levelset.csv"])
        run(["simulate", name, o / f"{name}-cert.json", "--n", args.n, "--format", "svg",
             "--out", o / f"{name}-trajectories.svg"])
        run(["simulate", name, o / f"{name}-cert.json", "--n", args.n, "--format", "json",
             "--out", o / f"{name}-sim.json"])


if __name__ == "__main__":
    main()
