"""Backstepping lift of a single-integrator base controller to the true dynamics.

Work happens in the transformed coordinates eta_s^i (s-th derivative stack of
output i, see :func:`reachstep.dynamics.eta_name`).  With layer mismatches
e_l^i = eta_{l+1}^i - k_l^i the guidance function is

    Psi = psi(eta_1) - sum_i sum_l (1 / 2 mu_l^i) (e_l^i)^2

and the virtual controllers follow

    k_l^i = -mu_{l-1}^i P_{l-1}^i + d/dt k_{l-1}^i + (lam/2) e_{l-1}^i,
    P_1^i = -dpsi/dy_i,   P_l^i = e_{l-1}^i / mu_{l-1}^i  (l >= 2).

The last layer produces b_i(x) and the input u = A(x)^-1 b(x).  Time
derivatives are total derivatives over every transformed coordinate, so a
coupled k_1 (each component depending on all outputs) is handled.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .dynamics import (
    ControlAffineSystem, DecouplingData, EtaMap, RelativeDegreeProfile, SingularDecouplingError, build_eta_map,
    decoupling, eta_name, vector_relative_degree, SINGULAR_TOL,
)
from .sos import BaseController
from .symbolic import (
    Expr, Polynomial, Var, add, compile_exprs, differentiate, free_vars, mul, parse, power, scale, sub, substitute,
    to_string,
)

__all__ = [
    "GainSchedule", "EcgbfCertificate", "LevelSetGrid", "TopOfChainError", "EmptySafeSubsetError",
    "total_time_derivative", "build_chain", "build_certificate", "sample_safe_subset", "levelset_grid",
    "certificate_to_dict", "certificate_from_dict", "save_certificate", "load_certificate", "NestingReport",
    "mu_nesting",
]

log = logging.getLogger(__name__)

MIN_ACCEPTANCE = 1e-4


class TopOfChainError(ValueError):
    """A derivative would need eta at the top of a chain, whose rate involves the input."""


class EmptySafeSubsetError(RuntimeError):
    def __init__(self, accepted: int, drawn: int):
        super().__init__(
            f"only {accepted} of {drawn} samples have Psi > 0; the set {{Psi > 0}} looks empty "
            "(small mu shrinks it)"
        )
        self.accepted, self.drawn = accepted, drawn


@dataclass(frozen=True)
class GainSchedule:
    """mu[i][l-1] = mu_l^i for l = 1..gamma_i - 1, and the shared rate lam."""

    mu: tuple[tuple[float, ...], ...]
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "mu", tuple(tuple(float(v) for v in row) for row in self.mu))
        if any(not v > 0 for row in self.mu for v in row):
            raise ValueError("all mu must be positive")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    @classmethod
    def uniform(cls, gammas: Sequence[int], mu: float, lam: float) -> "GainSchedule":
        return cls(tuple((mu,) * (g - 1) for g in gammas), lam)

    @classmethod
    def from_spec(cls, gammas: Sequence[int], mu, lam: float) -> "GainSchedule":
        if mu is None:
            mu = 1.0
        if isinstance(mu, (int, float)):
            return cls.uniform(gammas, float(mu), lam)
        mu = tuple(tuple(row) for row in mu)
        if len(mu) != len(gammas) or any(len(r) != g - 1 for r, g in zip(mu, gammas)):
            raise ValueError(f"mu needs gamma_i - 1 entries per output, gammas = {tuple(gammas)}")
        return cls(mu, lam)


def _eta(i: int, s: int) -> str:
    return eta_name(i + 1, s + 1)


def _ev(i: int, s: int) -> Var:
    return Var(eta_name(i + 1, s + 1))


def total_time_derivative(e: Expr, gammas: Sequence[int]) -> Expr:
    """d/dt e along eta_s^i' = eta_{s+1}^i for s < gamma_i (0-based output index i)."""
    used = free_vars(e)
    terms = []
    for i, g in enumerate(gammas):
        for s in range(g):
            name = _eta(i, s)
            if name not in used:
                continue
            if s == g - 1:
                raise TopOfChainError(f"{name} is the top of chain {i + 1}; its derivative involves the input")
            terms.append(mul(differentiate(e, name), _ev(i, s + 1)))
    unknown = used - {_eta(i, s) for i, g in enumerate(gammas) for s in range(g)}
    if unknown:
        raise ValueError(f"expression uses non-transformed variables {sorted(unknown)}")
    return add(*terms)


def _psi_eta(psi: Polynomial, gammas) -> Expr:
    return substitute(psi.to_expr(), {v: _ev(i, 0) for i, v in enumerate(psi.vars)})


def build_chain(psi_eta: Expr, k1: Sequence[Expr], gains: GainSchedule, gammas: Sequence[int]):
    """Virtual controllers k_l^i, l = 1..gamma_i - 1, as expressions in eta.

    Returns ``chain`` with chain[i][l-1] = k_l^i (empty for gamma_i = 1).
    """
    lam = gains.lam
    chain = []
    for i, g in enumerate(gammas):
        layers: list[Expr] = []
        if g >= 2:
            layers.append(k1[i])
        for l in range(2, g):
            prev = layers[-1]
            mu = gains.mu[i][l - 2]
            if l == 2:
                push = mul(mu, differentiate(psi_eta, _eta(i, 0)))
            else:
                push = mul(-mu / gains.mu[i][l - 3], sub(_ev(i, l - 2), layers[-2]))
            mismatch = sub(_ev(i, l - 1), prev)
            layers.append(add(push, total_time_derivative(prev, gammas), scale(mismatch, lam / 2)))
        chain.append(tuple(layers))
    return tuple(chain)


def _b_eta(psi_eta: Expr, k1: Sequence[Expr], chain, gains: GainSchedule, gammas) -> tuple[Expr, ...]:
    """b_i + L_f^gamma h_i, i.e. the part of b_i that lives in eta coordinates."""
    lam = gains.lam
    out = []
    for i, g in enumerate(gammas):
        if g == 1:
            out.append(k1[i])
            continue
        top = chain[i][-1]
        if g == 2:
            push = mul(gains.mu[i][0], differentiate(psi_eta, _eta(i, 0)))
        else:
            push = mul(-gains.mu[i][g - 2] / gains.mu[i][g - 3], sub(_ev(i, g - 2), chain[i][-2]))
        out.append(add(push, total_time_derivative(top, gammas), scale(sub(_ev(i, g - 1), top), lam / 2)))
    return tuple(out)


def _Psi_eta(psi_eta: Expr, chain, gains: GainSchedule) -> Expr:
    terms = [psi_eta]
    for i, layers in enumerate(chain):
        for l, k in enumerate(layers):
            terms.append(scale(power(sub(_ev(i, l + 1), k), 2), -1.0 / (2.0 * gains.mu[i][l])))
    return add(*terms)


@dataclass(frozen=True)
class EcgbfCertificate:
    system: ControlAffineSystem
    profile: RelativeDegreeProfile
    eta_map: EtaMap
    dec: DecouplingData
    psi: Polynomial
    phi: Polynomial
    k1: tuple[Expr, ...]
    gains: GainSchedule
    chain: tuple[tuple[Expr, ...], ...]
    Psi: Expr
    b_eta: tuple[Expr, ...]
    base_lambda: float
    base_hash: str = ""
    spec_hash: str = ""

    @property
    def lam(self) -> float:
        return self.gains.lam

    @property
    def gammas(self) -> tuple[int, ...]:
        return self.profile.r

    @property
    def eta_names(self) -> tuple[str, ...]:
        return self.eta_map.flat_names

    @cached_property
    def _psi_c(self):
        return compile_exprs([self.Psi], self.eta_names)

    @cached_property
    def _grad_c(self):
        return compile_exprs([differentiate(self.Psi, v) for v in self.eta_names], self.eta_names)

    @cached_property
    def _b_c(self):
        return compile_exprs(self.b_eta, self.eta_names)

    @cached_property
    def _sets_c(self):
        y = self.psi.vars
        return compile_exprs([self.psi.to_expr(), self.phi.to_expr()], y)

    def eta(self, x) -> np.ndarray:
        return self.eta_map.evaluate(x)

    def outputs(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.system.evaluate_fields(x)[2]

    def psi_phi(self, y) -> tuple[np.ndarray, np.ndarray]:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        a, b = self._sets_c(*y.T)
        return np.array(a, dtype=float), np.array(b, dtype=float)

    def psi_eval(self, x) -> np.ndarray:
        return np.array(self._psi_c(*self.eta(x).T)[0], dtype=float)

    def b_eval(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        _, lfr = self.dec.evaluate(x)
        return self._b_c.stacked(self.eta(x)) - lfr

    def controller(self, x, strict: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Inputs k(x) = A(x)^-1 b(x) for a batch, plus a mask of singular rows.

        Singular rows get NaN inputs; with ``strict`` any singular row raises.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        A, lfr = self.dec.evaluate(x)
        b = self._b_c.stacked(self.eta(x)) - lfr
        ok = np.all(np.isfinite(A), axis=(1, 2)) & np.all(np.isfinite(b), axis=1)
        smin = np.full(len(x), 0.0)
        if ok.any():
            smin[ok] = np.linalg.svd(A[ok], compute_uv=False)[:, -1]
        singular = ~ok | (smin < SINGULAR_TOL)
        if strict and singular.any():
            k = int(np.argmax(singular))
            raise SingularDecouplingError(
                f"decoupling matrix is singular at x = {x[k].tolist()} (sigma_min = {smin[k]:.3e})", float(smin[k]))
        u = np.full(b.shape, np.nan)
        good = ~singular
        if good.any():
            u[good] = np.linalg.solve(A[good], b[good][..., None])[..., 0]
        return u, singular

    def closed_loop(self, x, strict: bool = True):
        """x' = f(x) + g(x) k(x); returns (xdot, u, singular)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u, singular = self.controller(x, strict)
        f, g, _ = self.system.evaluate_fields(x)
        return f + np.einsum("nkj,nj->nk", g, u), u, singular

    def psi_dot_eval(self, x, strict: bool = True) -> np.ndarray:
        """grad Psi(x) . (f + g k)(x), with the gradient taken through the eta map."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xdot, _, _ = self.closed_loop(x, strict)
        grad_eta = self._grad_c.stacked(self.eta(x))
        J = self.eta_map.jacobian(x)
        return np.einsum("ne,nek,nk->n", grad_eta, J, xdot)

    def with_gains(self, gains: GainSchedule) -> "EcgbfCertificate":
        return _assemble(self.system, self.profile, self.eta_map, self.dec, self.psi, self.phi, self.k1, gains,
                         self.base_lambda, self.base_hash, self.spec_hash)


def _assemble(system, profile, eta_map, dec, psi, phi, k1, gains, base_lambda, base_hash, spec_hash):
    gammas = profile.r
    psi_eta = _psi_eta(psi, gammas)
    chain = build_chain(psi_eta, k1, gains, gammas)
    b_eta = _b_eta(psi_eta, k1, chain, gains, gammas)
    Psi = _Psi_eta(psi_eta, chain, gains)
    return EcgbfCertificate(system, profile, eta_map, dec, psi, phi, tuple(k1), gains, chain, Psi, b_eta,
                            base_lambda, base_hash, spec_hash)


def build_certificate(
    system: ControlAffineSystem,
    base: BaseController,
    psi: Polynomial,
    phi: Polynomial,
    mu=1.0,
    lam: float | None = None,
    profile: RelativeDegreeProfile | None = None,
    base_hash: str = "",
    spec_hash: str = "",
) -> EcgbfCertificate:
    """Lift ``base`` (over the outputs) to ``system``.  ``lam`` defaults to the base controller's rate."""
    profile = profile or vector_relative_degree(system)
    if len(base.k1) != system.m:
        raise ValueError(f"base controller has {len(base.k1)} components, system has {system.m} outputs")
    names = tuple(system.output_names)
    psi = psi.with_vars(names)
    phi = phi.with_vars(names)
    k1 = tuple(k.with_vars(names) for k in base.k1)
    k1_eta = tuple(substitute(k.to_expr(), {v: _ev(i, 0) for i, v in enumerate(names)}) for k in k1)
    lam = base.lam if lam is None else float(lam)
    gains = mu if isinstance(mu, GainSchedule) else GainSchedule.from_spec(profile.r, mu, lam)
    return _assemble(system, profile, build_eta_map(system, profile), decoupling(system, profile), psi, phi,
                     k1_eta, gains, base.lam, base_hash, spec_hash)


def sample_safe_subset(cert: EcgbfCertificate, count: int, seed: int = 0, chunk: int = 20000,
                       max_draws: int = 2_000_000) -> tuple[np.ndarray, float]:
    """Rejection-sample ``count`` states with Psi > 0 from the state box; returns (states, acceptance)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    kept, drawn, accepted = [], 0, 0
    while accepted < count:
        x = cert.system.sample_box(chunk, rng)
        drawn += chunk
        ok = cert.psi_eval(x) > 0
        kept.append(x[ok])
        accepted += int(ok.sum())
        if (drawn >= 100_000 and accepted / drawn < MIN_ACCEPTANCE) or drawn >= max_draws:
            if accepted < count:
                raise EmptySafeSubsetError(accepted, drawn)
    return np.concatenate(kept)[:count], accepted / drawn


@dataclass(frozen=True)
class LevelSetGrid:
    axes: tuple[str, str]
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray  # values[j, i] at (xs[i], ys[j])
    fixed: dict

    @property
    def positive(self) -> np.ndarray:
        return self.values > 0

    def to_csv(self, path) -> None:
        X, Y = np.meshgrid(self.xs, self.ys)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{self.axes[0]},{self.axes[1]},value\n")
            for a, b, v in zip(X.ravel(), Y.ravel(), self.values.ravel()):
                fh.write(f"{float(a)!r},{float(b)!r},{float(v)!r}\n")

    @classmethod
    def from_csv(cls, path, fixed=None) -> "LevelSetGrid":
        with open(path, encoding="utf-8") as fh:
            head = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        xs = np.unique(data[:, 0])
        ys = np.unique(data[:, 1])
        return cls((head[0], head[1]), xs, ys, data[:, 2].reshape(len(ys), len(xs)), dict(fixed or {}))


def levelset_grid(cert: EcgbfCertificate, axes: Sequence[str], fixed: dict | None = None, resolution: int = 256,
                  bounds: Sequence[tuple[float, float]] | None = None, field: str = "Psi") -> LevelSetGrid:
    """Psi (or psi) on a resolution x resolution slice; other states held at ``fixed`` (default 0)."""
    ax = tuple(axes)
    if len(ax) != 2 or ax[0] == ax[1]:
        raise ValueError("need two distinct slice variables")
    state = cert.system.state
    for a in ax:
        if a not in state:
            raise ValueError(f"{a!r} is not a state variable")
    fixed = dict(fixed or {})
    box = cert.system.box_dict
    bounds = bounds or [box[a] for a in ax]
    xs = np.linspace(*bounds[0], resolution)
    ys = np.linspace(*bounds[1], resolution)
    X, Y = np.meshgrid(xs, ys)
    pts = np.zeros((X.size, len(state)))
    for k, name in enumerate(state):
        pts[:, k] = X.ravel() if name == ax[0] else Y.ravel() if name == ax[1] else fixed.get(name, 0.0)
    if field == "Psi":
        vals = cert.psi_eval(pts)
    elif field == "psi":
        vals = cert.psi_phi(cert.outputs(pts))[0]
    else:
        raise ValueError("field must be 'Psi' or 'psi'")
    return LevelSetGrid(ax, xs, ys, vals.reshape(X.shape), fixed)


# --- serialisation ----------------------------------------------------------


def _hash_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def certificate_to_dict(cert: EcgbfCertificate) -> dict:
    return {
        "format": "reachstep.certificate.v1",
        "state": list(cert.system.state),
        "outputs": list(cert.system.output_names),
        "relative_degree": list(cert.gammas),
        "psi": to_string(cert.psi.to_expr()),
        "phi": to_string(cert.phi.to_expr()),
        "lambda": cert.lam,
        "base_lambda": cert.base_lambda,
        "mu": [list(r) for r in cert.gains.mu],
        "k1": [to_string(k) for k in cert.k1],
        "chain": [[to_string(k) for k in layers] for layers in cert.chain],
        "Psi": to_string(cert.Psi),
        "b_eta": [to_string(b) for b in cert.b_eta],
        "provenance": {"base_sha256": cert.base_hash, "spec_sha256": cert.spec_hash},
    }


def certificate_from_dict(d: dict, system: ControlAffineSystem) -> EcgbfCertificate:
    """Rebuild from JSON; the stored expressions are re-derived and must agree."""
    if d.get("format") != "reachstep.certificate.v1":
        raise ValueError("not a certificate file")
    if tuple(d["state"]) != system.state:
        raise ValueError("certificate was built for a different state vector")
    from .symbolic import to_polynomial

    names = tuple(system.output_names)
    profile = RelativeDegreeProfile(tuple(d["relative_degree"]), system.n)
    psi = to_polynomial(parse(d["psi"]), names)
    phi = to_polynomial(parse(d["phi"]), names)
    k1 = tuple(parse(s) for s in d["k1"])
    gains = GainSchedule(tuple(tuple(r) for r in d["mu"]), float(d["lambda"]))
    cert = _assemble(system, profile, build_eta_map(system, profile), decoupling(system, profile), psi, phi, k1, gains,
                     float(d["base_lambda"]), d["provenance"]["base_sha256"], d["provenance"]["spec_sha256"])
    if to_string(cert.Psi) != d["Psi"]:
        raise ValueError("stored Psi does not match the one rebuilt from k1 and the gains")
    return cert


def save_certificate(cert: EcgbfCertificate, path) -> str:
    text = json.dumps(certificate_to_dict(cert), indent=1) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return _hash_text(text)


def load_certificate(path, system: ControlAffineSystem) -> EcgbfCertificate:
    with open(path, encoding="utf-8") as fh:
        return certificate_from_dict(json.load(fh), system)


@dataclass(frozen=True)
class NestingReport:
    mus: tuple[float, ...]
    axes: tuple[str, str]
    resolution: int
    positive_cells: tuple[int, ...]
    counterexamples: tuple[int, ...]  # cells positive for mus[k] but not for mus[k + 1]
    safe_cells: int = 0  # cells with psi > 0 on the same slice

    @property
    def nested(self) -> bool:
        return not any(self.counterexamples)

    @property
    def ratios(self) -> tuple[float, ...]:
        """Sampled |C_Psi| / |C| on the slice, per gain (nan when the slice misses C)."""
        return tuple(c / self.safe_cells if self.safe_cells else float("nan") for c in self.positive_cells)

    def to_dict(self) -> dict:
        return {"mu": list(self.mus), "axes": list(self.axes), "resolution": self.resolution,
                "positive_cells": list(self.positive_cells), "safe_cells": self.safe_cells,
                "volume_ratio": [None if r != r else r for r in self.ratios],
                "counterexamples": list(self.counterexamples), "nested": self.nested}


def mu_nesting(cert: EcgbfCertificate, mus: Sequence[float], axes: Sequence[str], fixed: dict | None = None,
               resolution: int = 256, bounds=None) -> NestingReport:
    """Compare {Psi > 0} on a 2-D slice for uniform gains ``mus`` (sorted increasing)."""
    mus = tuple(sorted(float(m) for m in mus))
    grids = [levelset_grid(cert.with_gains(GainSchedule.uniform(cert.gammas, m, cert.lam)), axes, fixed,
                           resolution, bounds).positive for m in mus]
    safe = levelset_grid(cert, axes, fixed, resolution, bounds, field="psi").positive
    return NestingReport(mus, tuple(axes), resolution, tuple(int(g.sum()) for g in grids),
                         tuple(int(np.sum(a & ~b)) for a, b in zip(grids, grids[1:])), int(safe.sum()))
