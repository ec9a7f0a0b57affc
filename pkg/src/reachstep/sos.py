"""SOS program for a polynomial reach-avoid base controller.

Find a polynomial controller u(x), a rate lam >= eps, a slack delta >= 0 and
SOS multipliers s0, s1 such that

    grad(psi).(f + g u) - lam*psi + delta - s0*psi - s1*phi   is SOS,

minimising delta.  Everything except delta, lam and the controller
coefficients is a Gram matrix, so the program is a linear SDP.

Encoding (standard form, no free scalars):

* lam = eps + l with l >= 0,
* controller coefficients c = p - B with p, q >= 0 and p + q = 2B, i.e.
  |c| <= B.  The box keeps the optimal face bounded: when delta = 0 is
  attainable the certificate is invariant under positive scaling of
  (u, lam - eps, s0, s1, Q) and the coefficients would otherwise drift to
  infinity,
* one equality row per monomial of degree <= D matching coefficients.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .dynamics import ControlAffineSystem
from .sdp import SdpOptions, SdpProblem, SdpSolution, SdpStatus, solve
from .symbolic import NEG_INF, Polynomial, Var, monomial_basis, substitute, to_polynomial, to_string

__all__ = [
    "SemialgebraicSpec", "SynthesisConfig", "BaseController", "GramBlock", "SosProgram", "SosAudit",
    "NotPolynomialSystemError", "SynthesisInputError", "build_program", "solve_program",
    "verify_sos_residual", "gram_polynomial", "gram_residual", "base_to_dict", "base_from_dict",
    "monomial_basis", "synthesize", "Coordinates", "affine_compose", "program_for",
]

log = logging.getLogger(__name__)

PSD_TOL = 1e-8
RESIDUAL_TOL = 1e-7
DEFAULT_BOX = (-10.0, 10.0)


class SynthesisInputError(ValueError):
    pass


class NotPolynomialSystemError(SynthesisInputError):
    def __init__(self, what: str):
        super().__init__(
            f"{what} is not polynomial; SOS synthesis needs polynomial data. For non-polynomial plants "
            "synthesise on the single-integrator surrogate of the outputs and lift the result with the "
            "backstepping pipeline."
        )


def _even_ceil(d) -> int:
    if d == NEG_INF or d <= 0:
        return 0
    return int(2 * math.ceil(d / 2))


@dataclass(frozen=True)
class SemialgebraicSpec:
    """Safe set {psi > 0} and target {phi < 0} over a common variable list."""

    psi: Polynomial
    phi: Polynomial
    box: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        names = list(self.psi.vars) + [v for v in self.phi.vars if v not in self.psi.vars]
        object.__setattr__(self, "psi", self.psi.with_vars(names))
        object.__setattr__(self, "phi", self.phi.with_vars(names))
        if self.psi.is_constant():
            raise SynthesisInputError("psi must be nonconstant")
        if self.phi.is_constant():
            raise SynthesisInputError("phi must be nonconstant")
        if self.box is not None:
            box = tuple((float(lo), float(hi)) for lo, hi in self.box)
            if len(box) != len(names) or any(not lo < hi for lo, hi in box):
                raise SynthesisInputError("box needs one interval lo < hi per variable")
            object.__setattr__(self, "box", box)

    @property
    def vars(self) -> tuple[str, ...]:
        return self.psi.vars

    def sample(self, count: int, seed: int = 0) -> np.ndarray:
        box = self.box or (DEFAULT_BOX,) * len(self.vars)
        lo, hi = np.array(box).T
        return lo + (hi - lo) * np.random.default_rng(seed).random((count, len(self.vars)))

    def assumption_check(self, count: int = 20000, seed: int = 0) -> tuple[float, float]:
        """Sampled fractions of the box lying in C and in C intersect X^r."""
        pts = self.sample(count, seed)
        ps = self.psi(*pts.T)
        ph = self.phi(*pts.T)
        return float(np.mean(ps > 0)), float(np.mean((ps > 0) & (ph < 0)))


@dataclass(frozen=True)
class SynthesisConfig:
    deg_u: int = 3
    deg_s0: int | None = None
    deg_s1: int | None = None
    epsilon: float = 1e-2
    delta_tol: float = 1e-6
    coeff_bound: float = 100.0
    refine_epsilon: float | None = None
    condition: bool = True
    sdp: SdpOptions = field(default_factory=SdpOptions)

    def __post_init__(self):
        if self.deg_u < 0:
            raise ValueError("deg_u must be >= 0")
        for d in (self.deg_s0, self.deg_s1):
            if d is not None and (d < 0 or d % 2):
                raise ValueError("multiplier degrees must be even and >= 0")
        if not (self.epsilon > 0 and self.delta_tol > 0 and self.coeff_bound > 0):
            raise ValueError("epsilon, delta_tol and coeff_bound must be positive")
        if self.refine_epsilon is not None and not 0 < self.refine_epsilon <= self.epsilon:
            raise ValueError("refine_epsilon must lie in (0, epsilon]")


@dataclass(frozen=True)
class GramBlock:
    vars: tuple[str, ...]
    basis: tuple[tuple[int, ...], ...]
    gram: np.ndarray

    def polynomial(self) -> Polynomial:
        return gram_polynomial(self.vars, self.basis, self.gram)

    @property
    def min_eig(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.gram + self.gram.T))[0])


def gram_polynomial(vars: Sequence[str], basis: Sequence[tuple[int, ...]], Q: np.ndarray) -> Polynomial:
    """basis' Q basis as a polynomial (Q is used as given, not symmetrised)."""
    out: dict[tuple[int, ...], float] = {}
    for j, a in enumerate(basis):
        for k, b in enumerate(basis):
            if Q[j, k] != 0.0:
                mono = tuple(x + y for x, y in zip(a, b))
                out[mono] = out.get(mono, 0.0) + float(Q[j, k])
    return Polynomial(vars, out)


def gram_residual(target: Polynomial, basis, Q: np.ndarray) -> tuple[float, float]:
    """(max coefficient mismatch, min eigenvalue) of a Gram representation."""
    diff = target - gram_polynomial(target.vars, basis, Q)
    return diff.max_abs_coefficient(), float(np.linalg.eigvalsh(0.5 * (Q + Q.T))[0])


@dataclass
class SosProgram:
    """An assembled program.  Polynomial fields live in program coordinates (see ``coords``)."""

    sdp: SdpProblem
    vars: tuple[str, ...]
    spec: SemialgebraicSpec
    cfg: SynthesisConfig
    degree: int
    rows: list[tuple[int, ...]]
    main_basis: list[tuple[int, ...]]
    s0_basis: list[tuple[int, ...]]
    s1_basis: list[tuple[int, ...]]
    ctrl_basis: list[tuple[int, ...]]
    psi: Polynomial
    phi: Polynomial
    drift: Polynomial
    input_gains: list[Polynomial]
    fixed_k1: tuple[Polynomial, ...] | None = None
    coords: Coordinates | None = None

    @property
    def n_ctrl(self) -> int:
        return len(self.input_gains) * len(self.ctrl_basis)


@dataclass
class BaseController:
    vars: tuple[str, ...]
    k1: tuple[Polynomial, ...]
    lam: float
    delta: float
    certified: bool
    status: str
    message: str = ""
    main: GramBlock | None = None
    s0: GramBlock | None = None
    s1: GramBlock | None = None
    psi: Polynomial | None = None
    phi: Polynomial | None = None
    epsilon: float = 0.0
    delta_tol: float = 0.0
    iterations: int = 0
    coords: Coordinates | None = None
    stage1_delta: float | None = None


@dataclass(frozen=True)
class Coordinates:
    """Program coordinates z with x = shift + scale * z; psi and phi divided by constants.

    The change of variables and the positive normalisations do not alter
    which polynomials are SOS, they only improve the conditioning of the
    coefficient-matching rows.
    """

    shift: tuple[float, ...]
    scale: tuple[float, ...]
    psi_scale: float = 1.0
    phi_scale: float = 1.0

    @classmethod
    def identity(cls, n: int) -> "Coordinates":
        return cls((0.0,) * n, (1.0,) * n)

    def to_program(self, p: Polynomial) -> Polynomial:
        """p(shift + scale * z)."""
        return affine_compose(p, self.shift, self.scale)

    def from_program(self, p: Polynomial) -> Polynomial:
        """q((x - shift) / scale)."""
        inv = tuple(1.0 / s for s in self.scale)
        return affine_compose(p, tuple(-c / s for c, s in zip(self.shift, self.scale)), inv)


def affine_compose(p: Polynomial, shift: Sequence[float], scale: Sequence[float]) -> Polynomial:
    """Substitute x_i -> shift_i + scale_i * x_i in ``p``."""
    n = len(p.vars)
    top = [max((m[i] for m in p.terms), default=0) for i in range(n)]
    # univariate expansions of (c + s t)^k as exponent -> coefficient
    pw = []
    for i in range(n):
        c, sc = float(shift[i]), float(scale[i])
        rows = [{0: 1.0}]
        for _ in range(top[i]):
            prev = rows[-1]
            nxt: dict[int, float] = {}
            for e, v in prev.items():
                nxt[e] = nxt.get(e, 0.0) + c * v
                nxt[e + 1] = nxt.get(e + 1, 0.0) + sc * v
            rows.append(nxt)
        pw.append(rows)
    out: dict[tuple[int, ...], float] = {}
    for mono, coef in p.terms.items():
        acc = {(): coef}
        for i in range(n):
            nxt = {}
            for k, v in acc.items():
                for e, w in pw[i][mono[i]].items():
                    key = k + (e,)
                    nxt[key] = nxt.get(key, 0.0) + v * w
            acc = nxt
        for k, v in acc.items():
            out[k] = out.get(k, 0.0) + v
    return Polynomial(p.vars, out)


def _conditioning_box(sys: ControlAffineSystem, psi: Polynomial, samples: int = 20000):
    """Centre and half-widths of the sampled part of {psi >= 0} in the state box."""
    pts = sys.sample_box(samples, np.random.default_rng(0))
    inside = pts[psi(*pts.T) >= 0]
    lo, hi = np.array(sys.state_box).T
    if len(inside) >= 2:
        lo, hi = inside.min(axis=0), inside.max(axis=0)
        pad = 0.05 * (hi - lo)
        lo, hi = lo - pad, hi + pad
    width = np.where(hi > lo, 0.5 * (hi - lo), 1.0)
    return tuple(float(v) for v in 0.5 * (lo + hi)), tuple(float(v) for v in width)


def _poly_fields(sys: ControlAffineSystem, what: str, exprs) -> list[Polynomial]:
    out = []
    for e in exprs:
        p = to_polynomial(e, sys.state)
        if not isinstance(p, Polynomial):
            raise NotPolynomialSystemError(what)
        out.append(p)
    return out


def build_program(
    sys: ControlAffineSystem,
    spec: SemialgebraicSpec,
    cfg: SynthesisConfig = SynthesisConfig(),
    fixed_k1: Sequence[Polynomial] | None = None,
) -> SosProgram:
    """Assemble the SDP.  With ``fixed_k1`` the controller is data, not a decision variable."""
    x = sys.state
    f = _poly_fields(sys, "the drift f", sys.f)
    g = [_poly_fields(sys, "the input matrix g", sys.g_column(j)) for j in range(sys.m)]
    unknown = set(spec.vars) - set(sys.output_names)
    if unknown:
        raise SynthesisInputError(f"psi/phi use {sorted(unknown)}, which are not outputs {sys.output_names}")
    h_bind = dict(zip(sys.output_names, sys.h))
    psi = to_polynomial(substitute(spec.psi.to_expr(), h_bind), x)
    phi = to_polynomial(substitute(spec.phi.to_expr(), h_bind), x)
    if not isinstance(psi, Polynomial) or not isinstance(phi, Polynomial):
        raise NotPolynomialSystemError("the output map h")

    if cfg.condition:
        shift, scale = _conditioning_box(sys, psi)
        coords = Coordinates(shift, scale)
        psi, phi = coords.to_program(psi), coords.to_program(phi)
        coords = Coordinates(shift, scale, psi.max_abs_coefficient(), phi.max_abs_coefficient())
        psi, phi = psi.scale(1.0 / coords.psi_scale), phi.scale(1.0 / coords.phi_scale)
        # z' = (f + g u) / scale componentwise
        f = [coords.to_program(fk).scale(1.0 / sk) for fk, sk in zip(f, scale)]
        g = [[coords.to_program(gk).scale(1.0 / sk) for gk, sk in zip(gj, scale)] for gj in g]
    else:
        coords = Coordinates.identity(len(x))

    grad = [psi.diff(v) for v in x]
    drift = sum((gk * fk for gk, fk in zip(grad, f)), Polynomial(x))
    gains = [sum((gk * gj[k] for k, gk in enumerate(grad)), Polynomial(x)) for gj in g]
    dg = max((p.degree for p in gains), default=NEG_INF)
    deg_u = cfg.deg_u
    if fixed_k1 is not None:
        if len(fixed_k1) != sys.m:
            raise SynthesisInputError(f"fixed controller needs {sys.m} components")
        fixed_k1 = tuple(coords.to_program(k.with_vars(x)) for k in fixed_k1)
        drift = drift + sum((gj * kj for gj, kj in zip(gains, fixed_k1)), Polynomial(x))
        deg_u = max((k.degree for k in fixed_k1), default=0)
        deg_u = 0 if deg_u == NEG_INF else deg_u
    d_core = max(dg + deg_u, psi.degree)
    auto = _even_ceil(d_core - max(psi.degree, phi.degree))
    ds0 = auto if cfg.deg_s0 is None else cfg.deg_s0
    ds1 = auto if cfg.deg_s1 is None else cfg.deg_s1
    D = _even_ceil(max(drift.degree, dg + deg_u, psi.degree, ds0 + psi.degree, ds1 + phi.degree))

    nx = len(x)
    rows = monomial_basis(nx, D)
    row_of = {mono: i for i, mono in enumerate(rows)}
    main_basis = monomial_basis(nx, D // 2)
    s0_basis = monomial_basis(nx, ds0 // 2)
    s1_basis = monomial_basis(nx, ds1 // 2)
    ctrl_basis = monomial_basis(nx, cfg.deg_u) if fixed_k1 is None else []
    T = sys.m * len(ctrl_basis)
    R = len(rows)
    m_eq = R + T
    B = cfg.coeff_bound
    eps = cfg.epsilon

    def gram_rows(basis):
        n = len(basis)
        a = np.zeros((m_eq, n, n))
        for j, za in enumerate(basis):
            for k, zb in enumerate(basis):
                a[row_of[tuple(p + q for p, q in zip(za, zb))], j, k] += 1.0
        return a

    def mult_rows(basis, poly):
        n = len(basis)
        a = np.zeros((m_eq, n, n))
        for j, za in enumerate(basis):
            for k, zb in enumerate(basis):
                for mono, c in poly.terms.items():
                    tot = tuple(p + q + r for p, q, r in zip(za, zb, mono))
                    a[row_of[tot], j, k] += c
        return a

    # Q (main) + s0*psi + s1*phi + l*psi - delta - sum p_t G_t = drift - eps*psi - B*sum G_t
    a_main = gram_rows(main_basis)
    a_s0 = mult_rows(s0_basis, psi)
    a_s1 = mult_rows(s1_basis, phi)
    a_lp = np.zeros((m_eq, 2 + 2 * T))
    a_lp[row_of[(0,) * nx], 0] = -1.0
    for mono, c in psi.terms.items():
        a_lp[row_of[mono], 1] += c
    b = np.zeros(m_eq)
    for mono, c in drift.terms.items():
        b[row_of[mono]] += c
    for mono, c in psi.terms.items():
        b[row_of[mono]] -= eps * c
    t = 0
    for gj in gains:
        for cm in ctrl_basis:
            for mono, c in gj.terms.items():
                r = row_of[tuple(p + q for p, q in zip(cm, mono))]
                a_lp[r, 2 + t] -= c
                b[r] -= B * c
            # box row p_t + q_t = 2B
            a_lp[R + t, 2 + t] = 1.0
            a_lp[R + t, 2 + T + t] = 1.0
            b[R + t] = 2.0 * B
            t += 1
    c_lp = np.zeros(2 + 2 * T)
    c_lp[0] = 1.0
    sizes = (len(main_basis), len(s0_basis), len(s1_basis), -(2 + 2 * T))
    sdp = SdpProblem(
        sizes,
        [np.zeros((s, s)) for s in sizes[:3]] + [c_lp],
        [a_main, a_s0, a_s1, a_lp],
        b,
    )
    return SosProgram(sdp, x, spec, cfg, D, rows, main_basis, s0_basis, s1_basis, ctrl_basis, psi, phi, drift, gains,
                      fixed_k1, coords)


def _extract(prog: SosProgram, sol: SdpSolution) -> BaseController:
    cfg = prog.cfg
    x = prog.vars
    coords = prog.coords or Coordinates.identity(len(x))
    lp = sol.x[3]
    T = len(prog.ctrl_basis)
    delta = coords.psi_scale * float(lp[0])
    lam = cfg.epsilon + float(lp[1])
    if prog.fixed_k1 is not None:
        k1_z = prog.fixed_k1
    else:
        coeffs = lp[2:2 + prog.n_ctrl] - cfg.coeff_bound
        k1_z = tuple(
            Polynomial(x, {mono: coeffs[j * T + t] for t, mono in enumerate(prog.ctrl_basis)})
            for j in range(len(prog.input_gains))
        )
    k1 = tuple(coords.from_program(k) for k in k1_z)
    blocks = [GramBlock(x, tuple(bs), np.array(q)) for bs, q in
              zip((prog.main_basis, prog.s0_basis, prog.s1_basis), sol.x[:3])]
    base = BaseController(
        vars=x, k1=k1, lam=lam, delta=delta, certified=False, status=sol.status.value, message="",
        main=blocks[0], s0=blocks[1], s1=blocks[2], psi=prog.spec.psi, phi=prog.spec.phi,
        epsilon=cfg.epsilon, delta_tol=cfg.delta_tol, iterations=sol.iterations, coords=coords,
    )
    # certification is decided on the returned point, not on the solver's
    # stopping flag: near-optimal iterates of a stalled solve are valid
    # certificates whenever the identity and the PSD checks hold
    if sol.status in (SdpStatus.INFEASIBLE, SdpStatus.DUAL_INFEASIBLE):
        base.message = f"solver status {sol.status.value}: {sol.message}"
        return base
    audit = verify_sos_residual(prog, base)
    if not np.isfinite(delta) or delta > cfg.delta_tol:
        base.message = f"delta = {delta:.3e} exceeds delta_tol = {cfg.delta_tol:.1e}"
    elif audit.worst_eig < -PSD_TOL:
        base.message = f"Gram matrix not PSD (min eigenvalue {audit.worst_eig:.2e})"
    elif not audit.max_residual <= RESIDUAL_TOL:
        base.message = f"Gram reconstruction residual {audit.max_residual:.2e} exceeds {RESIDUAL_TOL:.0e}"
    else:
        base.certified = lam >= cfg.epsilon
        base.message = f"certified: delta = {delta:.3e}, lambda = {lam:.6g}"
    if sol.status != SdpStatus.OPTIMAL:
        base.message += f" (solver status {sol.status.value}: {sol.message})"
    return base


def solver_options(prog: SosProgram) -> SdpOptions:
    """Backend options; a refinement solve gets a gap fine enough to resolve delta.

    The solver sees delta / psi_scale, so its absolute accuracy on delta is
    psi_scale times the gap tolerance.  A first solve has either delta ~ 0
    or delta far above delta_tol, where the default relative gap suffices.
    """
    opts = prog.cfg.sdp
    if prog.fixed_k1 is None or prog.coords is None:
        return opts
    return replace(opts, gap_tol=min(opts.gap_tol, 0.1 * prog.cfg.delta_tol / prog.coords.psi_scale))


Backend = Callable[[SdpProblem], SdpSolution]


def solve_program(prog: SosProgram, backend: Backend | None = None, check_samples: int = 20000) -> BaseController:
    """Solve ``prog``; the safe set is first checked to be nonempty by sampling.

    An empty safe set makes the certificate vacuous (the SOS condition is then
    trivially satisfiable), so it is reported as ``Infeasible`` without
    calling the solver.
    """
    in_c, in_both = prog.spec.assumption_check(check_samples)
    if in_c == 0.0:
        return BaseController(
            vars=prog.vars, k1=tuple(Polynomial(prog.vars) for _ in prog.input_gains), lam=float("nan"),
            delta=float("nan"), certified=False, status=SdpStatus.INFEASIBLE.value,
            message=f"safe set {{psi > 0}} is empty on {check_samples} samples of the box",
            psi=prog.spec.psi, phi=prog.spec.phi, epsilon=prog.cfg.epsilon, delta_tol=prog.cfg.delta_tol,
        )
    if in_both == 0.0:
        warnings.warn("no sampled point lies in both the safe set and the target", stacklevel=2)
    sol = backend(prog.sdp) if backend is not None else solve(prog.sdp, solver_options(prog))
    base = _extract(prog, sol)
    log.info("%s (%d iterations)", base.message, sol.iterations)
    return base


def synthesize(sys: ControlAffineSystem, spec: SemialgebraicSpec, cfg: SynthesisConfig = SynthesisConfig(),
               backend: Backend | None = None) -> BaseController:
    """Solve the program; optionally re-certify the controller found with a smaller rate bound.

    With ``cfg.refine_epsilon`` set and an uncertified first solve, the
    controller coefficients are frozen and the same program is solved again
    over (lam, delta, s0, s1) with lam >= refine_epsilon.  The result is a
    feasible point of the program for that smaller bound.
    """
    base = solve_program(build_program(sys, spec, cfg), backend)
    if base.certified or cfg.refine_epsilon is None or base.status != SdpStatus.OPTIMAL.value:
        return base
    cfg2 = replace(cfg, epsilon=cfg.refine_epsilon, refine_epsilon=None)
    refined = solve_program(build_program(sys, spec, cfg2, fixed_k1=base.k1), backend)
    refined.stage1_delta = base.delta
    refined.message = f"{refined.message} (controller from a first solve with delta = {base.delta:.3e})"
    log.info("refinement: %s", refined.message)
    return refined


def program_for(base: BaseController, sys: ControlAffineSystem, spec: SemialgebraicSpec,
                cfg: SynthesisConfig) -> SosProgram:
    """Rebuild the program a stored controller was certified against."""
    if base.stage1_delta is None:
        return build_program(sys, spec, cfg)
    return build_program(sys, spec, replace(cfg, epsilon=base.epsilon, refine_epsilon=None), fixed_k1=base.k1)


@dataclass(frozen=True)
class SosAudit:
    max_residual: float
    min_eig: dict[str, float]

    @property
    def worst_eig(self) -> float:
        return min(self.min_eig.values())


def verify_sos_residual(prog: SosProgram, base: BaseController) -> SosAudit:
    """Rebuild the certificate polynomial in program coordinates and compare with its Gram form."""
    coords = prog.coords or Coordinates.identity(len(prog.vars))
    lhs = prog.drift
    if prog.fixed_k1 is None:
        for gj, kj in zip(prog.input_gains, base.k1):
            lhs = lhs + gj * coords.to_program(kj.with_vars(prog.vars))
    lhs = lhs - prog.psi.scale(base.lam) + base.delta / coords.psi_scale
    lhs = lhs - base.s0.polynomial() * prog.psi - base.s1.polynomial() * prog.phi
    res, _ = gram_residual(lhs, base.main.basis, base.main.gram)
    return SosAudit(res, {"main": base.main.min_eig, "s0": base.s0.min_eig, "s1": base.s1.min_eig})


# --- serialisation ------------------------------------------------------------


def _poly_to_list(p: Polynomial):
    return [{"exponent": list(m), "coeff": p.terms[m]} for m in p.monomials()]


def _poly_from_list(vars, items) -> Polynomial:
    return Polynomial(vars, {tuple(t["exponent"]): t["coeff"] for t in items})


def _gram_to_dict(g: GramBlock | None):
    if g is None:
        return None
    return {"basis": [list(b) for b in g.basis], "matrix": np.asarray(g.gram).tolist()}


def _gram_from_dict(vars, d):
    if d is None:
        return None
    return GramBlock(tuple(vars), tuple(tuple(b) for b in d["basis"]), np.array(d["matrix"], dtype=float))


def base_to_dict(base: BaseController) -> dict:
    return {
        "format": "reachstep.base-controller.v1",
        "vars": list(base.vars),
        "k1": [_poly_to_list(p) for p in base.k1],
        "lambda": base.lam,
        "delta": base.delta,
        "certified": base.certified,
        "status": base.status,
        "message": base.message,
        "epsilon": base.epsilon,
        "delta_tol": base.delta_tol,
        "iterations": base.iterations,
        "psi": to_string(base.psi.to_expr()) if base.psi is not None else None,
        "phi": to_string(base.phi.to_expr()) if base.phi is not None else None,
        "gram": {k: _gram_to_dict(getattr(base, k)) for k in ("main", "s0", "s1")},
        "coordinates": None if base.coords is None else {
            "shift": list(base.coords.shift), "scale": list(base.coords.scale),
            "psi_scale": base.coords.psi_scale, "phi_scale": base.coords.phi_scale,
        },
        "stage1_delta": base.stage1_delta,
    }


def base_from_dict(d: dict) -> BaseController:
    from .symbolic import parse

    vars = tuple(d["vars"])

    def poly_or_none(s):
        return None if s is None else to_polynomial(parse(s), vars)

    return BaseController(
        vars=vars,
        k1=tuple(_poly_from_list(vars, items) for items in d["k1"]),
        lam=float(d["lambda"]),
        delta=float(d["delta"]),
        certified=bool(d["certified"]),
        status=d["status"],
        message=d.get("message", ""),
        main=_gram_from_dict(vars, d["gram"].get("main")),
        s0=_gram_from_dict(vars, d["gram"].get("s0")),
        s1=_gram_from_dict(vars, d["gram"].get("s1")),
        psi=poly_or_none(d.get("psi")),
        phi=poly_or_none(d.get("phi")),
        epsilon=float(d.get("epsilon", 0.0)),
        delta_tol=float(d.get("delta_tol", 0.0)),
        iterations=int(d.get("iterations", 0)),
        coords=None if d.get("coordinates") is None else Coordinates(
            tuple(d["coordinates"]["shift"]), tuple(d["coordinates"]["scale"]),
            float(d["coordinates"]["psi_scale"]), float(d["coordinates"]["phi_scale"]),
        ),
        stage1_delta=d.get("stage1_delta"),
    )
