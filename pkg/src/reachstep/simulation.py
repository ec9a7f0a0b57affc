"""Closed-loop simulation, outcome classification, Psi audits and export."""
from __future__ import annotations

import csv
import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .backstepping import EcgbfCertificate, sample_safe_subset
from .dynamics import ControlAffineSystem, DecouplingData, RelativeDegreeProfile, solve_decoupled

__all__ = [
    "Outcome", "SimConfig", "Trajectory", "BatchReport", "AuditResult", "VerifyReport", "rk4_step", "rk4_step_t", "audit_trajectory", "export_report",
    "simulate", "run_trajectory", "run_batch", "monotonicity_audit", "verify_pointwise", "export_csv",
    "export_batch_csv", "export_svg", "measure_linearization", "LinearizationCheck",
]

log = logging.getLogger(__name__)


class Outcome(str, enum.Enum):
    REACHED = "Reached"
    SAFETY_VIOLATED = "SafetyViolated"
    SINGULAR = "SingularDecoupling"
    TIMEOUT = "Timeout"


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    t_max: float = 20.0
    stop_on_reach: bool = True
    stop_on_safety: bool = True
    # when False a singular decoupling matrix raises instead of ending the run
    stop_on_singular: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_max >= self.dt:
            raise ValueError("t_max must be at least dt")

    @property
    def steps(self) -> int:
        return int(round(self.t_max / self.dt))


def rk4_step(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dt: float, k1: np.ndarray | None = None
             ) -> np.ndarray:
    """One classical Runge-Kutta step of x' = fn(x); ``k1`` may carry an already computed fn(x)."""
    if k1 is None:
        k1 = fn(x)
    k2 = fn(x + 0.5 * dt * k1)
    k3 = fn(x + 0.5 * dt * k2)
    k4 = fn(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step_t(fn: Callable[[float, np.ndarray], np.ndarray], t: float, x: np.ndarray, dt: float) -> np.ndarray:
    """Runge-Kutta step for a time-dependent field fn(t, x)."""
    k1 = fn(t, x)
    k2 = fn(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = fn(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = fn(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    Psi: np.ndarray
    psi: np.ndarray
    outcome: Outcome
    outcome_time: float
    state_names: tuple[str, ...] = ()
    output_names: tuple[str, ...] = ()

    @property
    def outcome_index(self) -> int:
        return len(self.times) - 1

    def to_rows(self):
        for k in range(len(self.times)):
            yield [self.times[k], *self.states[k], *self.outputs[k], *self.inputs[k], self.Psi[k]]

    def header(self) -> list[str]:
        n, m = self.states.shape[1], self.outputs.shape[1]
        xs = self.state_names or tuple(f"x{i + 1}" for i in range(n))
        ys = self.output_names or tuple(f"y{i + 1}" for i in range(m))
        us = tuple(f"u{i + 1}" for i in range(self.inputs.shape[1]))
        return ["t", *xs, *ys, *us, "psi"]


def simulate(cert: EcgbfCertificate, x0: np.ndarray, cfg: SimConfig = SimConfig()) -> list[Trajectory]:
    """Integrate every initial state in ``x0`` (N, n) in lockstep; each run stops at its own event."""
    x = np.array(np.atleast_2d(x0), dtype=float)
    N, n = x.shape
    m = cert.system.m
    dt, K = cfg.dt, cfg.steps

    def field_fn(z):
        return cert.closed_loop(z, strict=not cfg.stop_on_singular)[0]

    hist_x, hist_y, hist_u, hist_P, hist_p = [], [], [], [], []
    alive = np.ones(N, dtype=bool)
    outcome = np.array([Outcome.TIMEOUT] * N, dtype=object)
    end_step = np.full(N, K)
    for k in range(K + 1):
        y = cert.outputs(x)
        ps, ph = cert.psi_phi(y)
        xdot, u, singular = cert.closed_loop(x, strict=not cfg.stop_on_singular)
        hist_x.append(x.copy())
        hist_y.append(y)
        hist_u.append(u)
        hist_P.append(cert.psi_eval(x))
        hist_p.append(ps)
        events = [
            (ph < 0) if cfg.stop_on_reach else np.zeros(N, bool),
            (ps <= 0) if cfg.stop_on_safety else np.zeros(N, bool),
            singular | ~np.all(np.isfinite(x), axis=1),
        ]
        for ev, tag in zip(events, (Outcome.REACHED, Outcome.SAFETY_VIOLATED, Outcome.SINGULAR)):
            hit = alive & ev
            outcome[hit] = tag
            end_step[hit] = k
            alive &= ~hit
        if k == K or not alive.any():
            break
        idx = np.flatnonzero(alive)
        x_new = x.copy()
        x_new[idx] = rk4_step(field_fn, x[idx], dt, xdot[idx])
        # a singular stage evaluation poisons the step; keep the last good state
        bad = idx[~np.all(np.isfinite(x_new[idx]), axis=1)]
        if bad.size:
            outcome[bad] = Outcome.SINGULAR
            end_step[bad] = k
            alive[bad] = False
            x_new[bad] = x[bad]
        x = x_new

    H = [np.stack(h) for h in (hist_x, hist_y, hist_u, hist_P, hist_p)]
    times = np.arange(len(hist_x)) * dt
    out = []
    for j in range(N):
        e = int(end_step[j])
        out.append(Trajectory(
            times=times[: e + 1].copy(), states=H[0][: e + 1, j], outputs=H[1][: e + 1, j], inputs=H[2][: e + 1, j],
            Psi=H[3][: e + 1, j], psi=H[4][: e + 1, j], outcome=outcome[j], outcome_time=float(times[e]),
            state_names=cert.system.state, output_names=cert.system.output_names,
        ))
    return out


def run_trajectory(cert: EcgbfCertificate, x0, cfg: SimConfig = SimConfig()) -> Trajectory:
    x0 = np.asarray(x0, dtype=float)
    if cert.psi_eval(x0[None, :])[0] <= 0:
        log.warning("initial state has Psi <= 0; no guarantee applies")
    return simulate(cert, x0[None, :], cfg)[0]


@dataclass(frozen=True)
class AuditResult:
    max_drop: float
    worst_step: int
    passed: bool


def monotonicity_audit(traj_or_values, rel_tol: float = 1e-6) -> AuditResult:
    """Largest per-step decrease of Psi up to the final (event) sample.

    A step passes when Psi_k - Psi_{k+1} <= rel_tol * (1 + |Psi_k|).
    """
    vals = np.asarray(traj_or_values.Psi if isinstance(traj_or_values, Trajectory) else traj_or_values, dtype=float)
    if vals.size < 2:
        raise ValueError("need at least two samples")
    drop = vals[:-1] - vals[1:]
    excess = drop - rel_tol * (1.0 + np.abs(vals[:-1]))
    k = int(np.argmax(drop))
    worst = int(np.argmax(excess))
    passed = bool(excess[worst] <= 0)
    return AuditResult(float(drop[k]), worst if not passed else k, passed)


@dataclass
class BatchReport:
    trajectories: list[Trajectory]
    acceptance: float
    audits: list[AuditResult]
    paths: dict[str, str] = field(default_factory=dict)

    @property
    def counts(self) -> dict[str, int]:
        c = {o.value: 0 for o in Outcome}
        for t in self.trajectories:
            c[t.outcome.value] += 1
        return c

    @property
    def min_psi(self) -> list[float]:
        return [float(np.min(t.psi)) for t in self.trajectories]

    @property
    def all_monotone(self) -> bool:
        return all(a.passed for a in self.audits)

    def to_dict(self) -> dict:
        return {
            "count": len(self.trajectories),
            "counts": self.counts,
            "acceptance": self.acceptance,
            "monotone": self.all_monotone,
            "max_Psi_drop": max((a.max_drop for a in self.audits), default=0.0),
            "runs": [
                {"outcome": t.outcome.value, "time": t.outcome_time, "x0": t.states[0].tolist(),
                 "min_psi": float(np.min(t.psi)), "max_Psi_drop": a.max_drop, "monotone": a.passed}
                for t, a in zip(self.trajectories, self.audits)
            ],
            "paths": dict(self.paths),
        }


def audit_trajectory(t: Trajectory, rel_tol: float = 1e-6) -> AuditResult:
    """Monotonicity audit over the samples strictly before a Reached event."""
    vals = t.Psi[:-1] if t.outcome is Outcome.REACHED else t.Psi
    if len(vals) < 2:
        return AuditResult(0.0, 0, True)
    return monotonicity_audit(vals, rel_tol)


def run_batch(cert: EcgbfCertificate, count: int, cfg: SimConfig = SimConfig()) -> BatchReport:
    if count < 1:
        raise ValueError("count must be >= 1")
    x0, acc = sample_safe_subset(cert, count, cfg.seed)
    trajs = simulate(cert, x0, cfg)
    return BatchReport(trajs, acc, [audit_trajectory(t) for t in trajs])


@dataclass(frozen=True)
class VerifyReport:
    min_value: float
    argmin: tuple[float, ...]
    samples: int
    drawn: int
    singular: int
    lam: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.min_value >= -self.tol

    @property
    def acceptance(self) -> float:
        return self.samples / self.drawn

    def to_dict(self) -> dict:
        return {"passed": self.passed, "min_PsiDot_minus_lambda_Psi": self.min_value, "argmin": list(self.argmin),
                "samples": self.samples, "drawn": self.drawn, "acceptance": self.acceptance,
                "singular_skipped": self.singular, "lambda": self.lam, "tol": self.tol}


def verify_pointwise(cert: EcgbfCertificate, samples: int = 10000, seed: int = 0, tol: float = 1e-6,
                     lam: float | None = None, chunk: int = 1_000_000, max_draws: int = 200_000_000) -> VerifyReport:
    """Monte-Carlo minimum of Psi' - lam Psi over {Psi >= 0, phi >= 0} in the state box."""
    if samples < 1:
        raise ValueError("invalid sample count: need at least one sample")
    lam = cert.lam if lam is None else float(lam)
    rng = np.random.default_rng(seed)
    kept, got, drawn = [], 0, 0
    while got < samples:
        if drawn >= max_draws:
            raise RuntimeError(f"only {got} admissible samples in {drawn} draws")
        x = cert.system.sample_box(chunk, rng)
        drawn += chunk
        x = x[cert.psi_eval(x) >= 0]
        if x.size:
            x = x[cert.psi_phi(cert.outputs(x))[1] >= 0]
        kept.append(x)
        got += len(x)
    pts = np.concatenate(kept)[:samples]
    _, _, singular = cert.closed_loop(pts, strict=False)
    good = pts[~singular]
    val = cert.psi_dot_eval(good, strict=False) - lam * cert.psi_eval(good)
    k = int(np.argmin(val))
    return VerifyReport(float(val[k]), tuple(good[k].tolist()), samples, drawn, int(singular.sum()), lam, tol)


# --- feedback linearization check --------------------------------------------


@dataclass(frozen=True)
class LinearizationCheck:
    times: np.ndarray
    commanded: np.ndarray
    measured: np.ndarray

    @property
    def relative_error(self) -> float:
        scale = np.max(np.abs(self.commanded), axis=0)
        return float(np.max(np.abs(self.measured - self.commanded) / np.where(scale > 0, scale, 1.0)))


def measure_linearization(sys: ControlAffineSystem, profile: RelativeDegreeProfile, dec: DecouplingData,
                          x0, v_fn: Callable[[float], np.ndarray], dt: float = 1e-3, steps: int = 200
                          ) -> LinearizationCheck:
    """Drive ``sys`` with u = A^-1 (v(t) - L_f^r h) and difference y_i r_i times.

    The r-th forward difference of samples y_k approximates y^(r) at
    t_k + r dt / 2 to second order, which is where v is compared.
    """
    x = np.asarray(x0, dtype=float)[None, :]

    def rhs(t, z):
        A, lfr = dec.evaluate(z)
        u = solve_decoupled(A, np.asarray(v_fn(t), dtype=float)[None, :] - lfr)
        f, g, _ = sys.evaluate_fields(z)
        return f + np.einsum("nkj,nj->nk", g, u)

    ys = [sys.evaluate_fields(x)[2][0]]
    for k in range(steps):
        x = rk4_step_t(rhs, k * dt, x, dt)
        ys.append(sys.evaluate_fields(x)[2][0])
    Y = np.array(ys)
    r = profile.r
    L = len(Y) - max(r)
    meas = np.stack([np.diff(Y[:, i], r[i])[:L] / dt ** r[i] for i in range(sys.m)], axis=1)
    cmd = np.array([[v_fn(k * dt + r[i] * dt / 2)[i] for i in range(sys.m)] for k in range(L)])
    return LinearizationCheck(np.arange(L) * dt, cmd, meas)


# --- export -----------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def export_csv(traj: Trajectory, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(traj.header())
        for row in traj.to_rows():
            w.writerow([_fmt(v) for v in row])
    return path


def export_batch_csv(trajs: Sequence[Trajectory], path, stride: int = 1) -> Path:
    """All runs in one file, prefixed by a ``run`` column; every ``stride``-th sample plus the last."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", *trajs[0].header()])
        for j, t in enumerate(trajs):
            rows = list(t.to_rows())
            keep = sorted(set(range(0, len(rows), stride)) | {len(rows) - 1})
            for k in keep:
                w.writerow([j, *(_fmt(v) for v in rows[k])])
    return path


def export_report(report: BatchReport, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=1) + "\n", encoding="utf-8")
    return path


def _contour_paths(fn, box, resolution=256):
    import contourpy

    xs = np.linspace(*box[0], resolution)
    ys = np.linspace(*box[1], resolution)
    X, Y = np.meshgrid(xs, ys)
    Z = fn(np.column_stack([X.ravel(), Y.ravel()])).reshape(X.shape)
    gen = contourpy.contour_generator(X, Y, Z, line_type=contourpy.LineType.Separate)
    return gen.lines(0.0)


def export_svg(cert: EcgbfCertificate, trajs: Sequence[Trajectory], path, box=None, resolution: int = 256,
               size: int = 480) -> Path:
    """Output-plane plot: psi = 0 and phi = 0 contours plus the output trajectories."""
    if box is None:
        ys = np.concatenate([t.outputs for t in trajs]) if trajs else np.zeros((0, 2))
        lo, hi = ys.min(axis=0), ys.max(axis=0)
        pad = 0.1 * np.maximum(hi - lo, 1.0)
        box = tuple(zip(lo - pad, hi + pad))
    (x0, x1), (y0, y1) = box
    sx = size / (x1 - x0)
    sy = size / (y1 - y0)

    def pt(p):
        return f"{(p[0] - x0) * sx:.2f},{(y1 - p[1]) * sy:.2f}"

    psi_c = _contour_paths(lambda Y: cert.psi_phi(Y)[0], box, resolution)
    phi_c = _contour_paths(lambda Y: cert.psi_phi(Y)[1], box, resolution)
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        '<g id="safe-set" fill="none" stroke="black" stroke-width="1.5">',
        *(f'<polyline points="{" ".join(pt(p) for p in c)}"/>' for c in psi_c),
        "</g>",
        '<g id="target-set" fill="none" stroke="green" stroke-width="1.5">',
        *(f'<polyline points="{" ".join(pt(p) for p in c)}"/>' for c in phi_c),
        "</g>",
        '<g id="trajectories" fill="none" stroke="steelblue" stroke-width="0.8" stroke-dasharray="3,2">',
    ]
    for t in trajs:
        step = max(1, len(t.outputs) // 400)
        pts = t.outputs[::step].tolist() + [t.outputs[-1].tolist()]
        parts.append(f'<polyline points="{" ".join(pt(p) for p in pts)}"/>')
    parts.append("</g>")
    parts.append('<g id="markers">')
    for t in trajs:
        a = pt(t.outputs[0]).split(",")
        b = pt(t.outputs[-1]).split(",")
        parts.append(f'<circle cx="{a[0]}" cy="{a[1]}" r="2.5" fill="orange"/>')
        parts.append(f'<path d="M{float(b[0]) - 3:.2f},{float(b[1]) - 3:.2f} l6,6 m0,-6 l-6,6" stroke="green"/>')
    parts += ["</g>", "</svg>"]
    path = Path(path)
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return path
