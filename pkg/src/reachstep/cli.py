"""``reachstep`` command line: analyze, synth, backstep, simulate, verify.

Exit codes: 0 ok, 2 bad input, 3 synthesis failure, 4 stale pipeline input,
5 verification failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import backstepping as bs
from .dynamics import RelativeDegreeUndefined, SingularDecouplingError, vector_relative_degree
from .sdp import export_sdpa
from .simulation import (
    SimConfig, export_batch_csv, export_report, export_svg, run_batch, verify_pointwise, audit_trajectory,
)
from .sos import base_from_dict, base_to_dict, program_for, synthesize
from .specfile import SpecError, SystemSpec, fixture_path, load_spec, FIXTURES

EXIT_OK, EXIT_SPEC, EXIT_SYNTH, EXIT_STALE, EXIT_VERIFY = 0, 2, 3, 4, 5

log = logging.getLogger("reachstep")


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, doc) -> str:
    text = json.dumps(doc, indent=1) + "\n"
    Path(path).write_text(text, encoding="utf-8")
    return hashlib.sha256(text.encode()).hexdigest()


def _spec(arg: str) -> SystemSpec:
    """A file path, or the name of a bundled fixture."""
    if not Path(arg).exists() and arg in FIXTURES:
        arg = str(fixture_path(arg))
    return load_spec(arg)


def _read_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliFailure(EXIT_SPEC, f"cannot read {what} {path}: {exc}") from None


def _load_cert(spec: SystemSpec, path) -> bs.EcgbfCertificate:
    doc = _read_json(path, "certificate")
    prov = doc.get("provenance", {})
    if prov.get("spec_sha256") != spec.sha256:
        raise CliFailure(EXIT_STALE, f"{path} was built from a different system file (spec hash mismatch)")
    try:
        return bs.certificate_from_dict(doc, spec.system)
    except (KeyError, ValueError) as exc:
        raise CliFailure(EXIT_SPEC, f"invalid certificate {path}: {exc}") from None


def _check_base_link(cert: bs.EcgbfCertificate, base_path) -> None:
    if base_path is not None and _sha256_file(base_path) != cert.base_hash:
        raise CliFailure(EXIT_STALE, f"certificate was not built from {base_path} (base hash mismatch)")


def _sim_config(spec: SystemSpec, seed: int | None) -> SimConfig:
    cfg = {k: v for k, v in spec.sim.items() if k in ("dt", "t_max")}
    return SimConfig(**cfg, seed=spec.sim.get("seed", 0) if seed is None else seed)


# --- commands -----------------------------------------------------------------


def cmd_analyze(args) -> int:
    spec = _spec(args.spec)
    try:
        prof = vector_relative_degree(spec.system)
    except RelativeDegreeUndefined as exc:
        raise CliFailure(EXIT_SPEC, f"relative degree undefined: {exc}") from None
    r = ",".join(str(k) for k in prof.r)
    lin = "fully linearizable" if prof.fully_linearizable else "not fully linearizable"
    if args.json:
        print(json.dumps({"name": spec.name, "relative_degree": list(prof.r), "sum": prof.sum_r,
                          "n": spec.system.n, "fully_linearizable": prof.fully_linearizable}))
    else:
        print(f"{spec.name}: vector relative degree {{{r}}}, {lin} (sum={prof.sum_r}, n={spec.system.n})")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = _spec(args.spec)
    cfg = spec.synthesis
    maxiter = os.environ.get("REACHSTEP_SDP_MAXITER")
    if maxiter:
        try:
            cfg = replace(cfg, sdp=replace(cfg.sdp, max_iter=int(maxiter)))
        except ValueError:
            raise CliFailure(EXIT_SPEC, f"REACHSTEP_SDP_MAXITER must be an integer, got {maxiter!r}") from None
    surrogate = spec.surrogate()
    base = synthesize(surrogate, spec.safe, cfg)
    if args.export_sdpa:
        prog = program_for(base, surrogate, spec.safe, cfg)
        export_sdpa(prog.sdp, args.export_sdpa)
        log.info("wrote %s", args.export_sdpa)
    print(f"{spec.name}: {base.message}")
    print(f"delta = {base.delta:.6e}  lambda = {base.lam:.6e}  status = {base.status}")
    if not base.certified:
        raise CliFailure(EXIT_SYNTH, "synthesis did not produce a certified controller")
    doc = base_to_dict(base)
    doc["provenance"] = {"spec_sha256": spec.sha256}
    digest = _write_json(args.out, doc)
    print(f"wrote {args.out} (sha256 {digest[:16]})")
    return EXIT_OK


def _parse_mu_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError("mu values must be positive")
    return vals


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def cmd_backstep(args) -> int:
    spec = _spec(args.spec)
    doc = _read_json(args.base, "base controller")
    if doc.get("provenance", {}).get("spec_sha256") != spec.sha256:
        raise CliFailure(EXIT_STALE, f"{args.base} was synthesised from a different system file (spec hash mismatch)")
    try:
        base = base_from_dict(doc)
    except (KeyError, ValueError, TypeError) as exc:
        raise CliFailure(EXIT_SPEC, f"invalid base controller {args.base}: {exc}") from None
    if not base.certified:
        raise CliFailure(EXIT_SYNTH, f"{args.base} is not a certified base controller")
    base_hash = _sha256_file(args.base)
    lam = spec.lambda_override
    mus = args.mu_sweep or [args.mu if args.mu is not None else spec.mu]
    out = Path(args.out)
    certs = []
    for mu in mus:
        cert = bs.build_certificate(spec.system, base, spec.psi, spec.phi, mu=mu, lam=lam,
                                    base_hash=base_hash, spec_hash=spec.sha256)
        path = out if len(mus) == 1 else out.with_name(f"{out.stem}-mu{mu:g}{out.suffix}")
        digest = bs.save_certificate(cert, path)
        certs.append(cert)
        print(f"wrote {path} (mu = {mu if mu is not None else 1.0}, sha256 {digest[:16]})")
    if args.grid_csv:
        sl = spec.levelset_slice or {}
        axes = sl.get("axes") or list(spec.system.state[:2])
        grid = bs.levelset_grid(certs[0], axes, sl.get("fixed"), sl.get("resolution", 256))
        grid.to_csv(args.grid_csv)
        print(f"wrote {args.grid_csv}")
    if len(mus) > 1:
        if spec.levelset_slice is None:
            raise CliFailure(EXIT_SPEC, "a mu sweep needs 'levelset_slice' in the system file")
        sl = spec.levelset_slice
        rep = bs.mu_nesting(certs[0], mus, sl["axes"], sl.get("fixed"), sl.get("resolution", 256))
        report_path = out.with_name(f"{out.stem}-nesting.json")
        _write_json(report_path, rep.to_dict())
        print(f"nesting over mu = {list(rep.mus)} on ({', '.join(rep.axes)}): positive cells "
              f"{list(rep.positive_cells)} (|C_Psi|/|C| {[round(r, 4) for r in rep.ratios]}), counterexamples {list(rep.counterexamples)} -> "
              f"{'nested' if rep.nested else 'NOT nested'}")
        if not rep.nested:
            return EXIT_VERIFY
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = _spec(args.spec)
    cert = _load_cert(spec, args.cert)
    _check_base_link(cert, args.base)
    n = args.n if args.n is not None else spec.sim.get("n", 100)
    cfg = _sim_config(spec, args.seed)
    try:
        rep = run_batch(cert, n, cfg)
    except bs.EmptySafeSubsetError as exc:
        raise CliFailure(EXIT_VERIFY, str(exc)) from None
    out = args.out or f"{spec.name}-sim.{args.format}"
    if args.format == "csv":
        export_batch_csv(rep.trajectories, out, stride=args.stride)
    elif args.format == "svg":
        export_svg(cert, rep.trajectories, out, box=spec.output_box)
    else:
        export_report(rep, out)
    rep.paths[args.format] = str(out)
    c = rep.counts
    print(f"{spec.name}: {n} runs, " + ", ".join(f"{k} {v}" for k, v in c.items())
          + f"; monotonicity {'pass' if rep.all_monotone else 'FAIL'}; wrote {out}")
    if c["SafetyViolated"] or not rep.all_monotone:
        return EXIT_VERIFY
    return EXIT_OK


def cmd_verify(args) -> int:
    spec = _spec(args.spec)
    cert = _load_cert(spec, args.cert)
    _check_base_link(cert, args.base)
    samples = args.samples if args.samples is not None else spec.verify.get("samples", 10000)
    seed = args.seed if args.seed is not None else spec.verify.get("seed", 0)
    try:
        rep = verify_pointwise(cert, samples, seed)
    except RuntimeError as exc:
        raise CliFailure(EXIT_VERIFY, str(exc)) from None
    result = {"name": spec.name, "inequality": rep.to_dict()}
    ok = rep.passed
    print(f"{spec.name}: min(Psi' - lambda Psi) = {rep.min_value:.6e} over {rep.samples} samples "
          f"({rep.drawn} drawn, {rep.singular} singular skipped) -> {'pass' if rep.passed else 'FAIL'}")
    if args.audit_runs:
        try:
            batch = run_batch(cert, args.audit_runs, _sim_config(spec, seed))
        except bs.EmptySafeSubsetError as exc:
            raise CliFailure(EXIT_VERIFY, str(exc)) from None
        audits = [audit_trajectory(t) for t in batch.trajectories]
        worst = max(a.max_drop for a in audits)
        mono = all(a.passed for a in audits)
        result["monotonicity"] = {"runs": args.audit_runs, "max_Psi_drop": worst, "passed": mono}
        ok = ok and mono
        print(f"{spec.name}: monotonicity over {args.audit_runs} runs, max Psi drop {worst:.3e} -> "
              f"{'pass' if mono else 'FAIL'}")
    if args.out:
        _write_json(args.out, result)
    return EXIT_OK if ok else EXIT_VERIFY


# --- entry point --------------------------------------------------------------


def _count(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reachstep", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    spec_help = "system file (JSON) or bundled fixture name: " + ", ".join(FIXTURES)

    a = sub.add_parser("analyze", help="vector relative degree of a system file")
    a.add_argument("spec", help=spec_help)
    a.add_argument("--json", action="store_true", help="machine-readable output")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("synth", help="SOS synthesis of the base controller")
    s.add_argument("spec", help=spec_help)
    s.add_argument("--out", required=True, help="base controller JSON to write")
    s.add_argument("--export-sdpa", metavar="PATH", help="also write the SDP in SDPA sparse format (.dat-s)")
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("backstep", help="lift a base controller to the system dynamics")
    b.add_argument("spec", help=spec_help)
    b.add_argument("base", help="base controller JSON from 'synth'")
    g = b.add_mutually_exclusive_group()
    g.add_argument("--mu", type=_positive, help="uniform gain mu (default: from the system file, else 1)")
    g.add_argument("--mu-sweep", type=_parse_mu_list, metavar="M1,M2,...",
                   help="one certificate per mu plus a nesting report on the level-set slice")
    b.add_argument("--out", required=True, help="certificate JSON to write")
    b.add_argument("--grid-csv", metavar="PATH", help="write the Psi level-set slice as CSV")
    b.set_defaults(func=cmd_backstep)

    m = sub.add_parser("simulate", help="closed-loop batch from random states with Psi > 0")
    m.add_argument("spec", help=spec_help)
    m.add_argument("cert", help="certificate JSON from 'backstep'")
    m.add_argument("--n", type=_count, help="number of runs (default: from the system file)")
    m.add_argument("--seed", type=int)
    m.add_argument("--format", choices=("csv", "svg", "json"), default="json")
    m.add_argument("--out", help="output file")
    m.add_argument("--stride", type=_count, default=1, help="CSV: keep every k-th sample")
    m.add_argument("--base", help="base controller JSON to check the hash chain against")
    m.set_defaults(func=cmd_simulate)

    v = sub.add_parser("verify", help="sampled check of Psi' >= lambda Psi and a monotonicity audit")
    v.add_argument("spec", help=spec_help)
    v.add_argument("cert", help="certificate JSON from 'backstep'")
    v.add_argument("--samples", type=_count)
    v.add_argument("--seed", type=int)
    v.add_argument("--audit-runs", type=int, default=10, help="trajectories for the monotonicity audit (0: skip)")
    v.add_argument("--out", help="write the report as JSON")
    v.add_argument("--base", help="base controller JSON to check the hash chain against")
    v.set_defaults(func=cmd_verify)
    return p


def _configure_logging() -> None:
    level = os.environ.get("REACHSTEP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except SingularDecouplingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
