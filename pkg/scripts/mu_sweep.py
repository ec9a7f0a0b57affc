#!/usr/bin/env python3
"""Sweep the backstepping gain and report how {Psi > 0} grows on a 2-D slice."""
import argparse
import json
from pathlib import Path

from reachstep.backstepping import GainSchedule, build_certificate, levelset_grid, mu_nesting
from reachstep.sos import synthesize
from reachstep.specfile import fixture_path, load_spec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("system", help="bundled system name or path to a system file")
    ap.add_argument("--mu", default="0.1,0.3,1,3,10,30,100", help="comma-separated gains")
    ap.add_argument("--resolution", type=int, default=256)
    ap.add_argument("--out", type=Path, help="directory for per-gain level-set CSVs and the JSON report")
    args = ap.parse_args()

    path = Path(args.system) if Path(args.system).exists() else fixture_path(args.system)
    spec = load_spec(path)
    if spec.levelset_slice is None:
        ap.error("the system file has no levelset_slice")
    sl = spec.levelset_slice
    mus = sorted(float(m) for m in args.mu.split(","))

    base = synthesize(spec.surrogate(), spec.safe, spec.synthesis)
    if not base.certified:
        raise SystemExit(f"synthesis failed: {base.message}")
    cert = build_certificate(spec.system, base, spec.psi, spec.phi, lam=spec.lambda_override)
    rep = mu_nesting(cert, mus, sl["axes"], sl.get("fixed"), args.resolution)

    print(f"{spec.name}: slice ({', '.join(rep.axes)}), {args.resolution}x{args.resolution}, "
          f"{rep.safe_cells} cells with psi > 0")
    print(f"{'mu':>10} {'cells':>8} {'|C_Psi|/|C|':>12}")
    for mu, cells, ratio in zip(rep.mus, rep.positive_cells, rep.ratios):
        print(f"{mu:>10g} {cells:>8d} {ratio:>12.4f}")
    print("nested" if rep.nested else f"NOT nested: counterexamples {list(rep.counterexamples)}")

    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        for mu in mus:
            g = levelset_grid(cert.with_gains(GainSchedule.uniform(cert.gammas, mu, cert.lam)), sl["axes"],
                              sl.get("fixed"), args.resolution)
            g.to_csv(args.out / f"{spec.name}-mu{mu:g}.csv")
        (args.out / f"{spec.name}-nesting.json").write_text(json.dumps(rep.to_dict(), indent=1) + "\n")
    return 0 if rep.nested else 1


if __name__ == "__main__":
    raise SystemExit(main())
