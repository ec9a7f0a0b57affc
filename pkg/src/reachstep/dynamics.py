"""Control-affine systems and input-output feedback linearization."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .symbolic import (
    Expr, Var, add, as_expr, compile_exprs, differentiate, free_vars, is_identically_zero, mul,
)

__all__ = [
    "ControlAffineSystem", "RelativeDegreeProfile", "ZeroTestConfig", "EtaMap", "DecouplingData",
    "RelativeDegreeUndefined", "SingularDecouplingError", "lie_derivative", "vector_relative_degree",
    "build_eta_map", "decoupling", "feedback_linearize", "eta_name",
]

log = logging.getLogger(__name__)

SINGULAR_TOL = 1e-10
RANK_CUTOFF = 1e-8


class RelativeDegreeUndefined(ValueError):
    pass


class SingularDecouplingError(ArithmeticError):
    def __init__(self, message: str, sigma_min: float = 0.0):
        super().__init__(message)
        self.sigma_min = sigma_min


@dataclass(frozen=True)
class ControlAffineSystem:
    """x' = f(x) + g(x) u, y = h(x).  ``g[k][j]`` is row k of column g_j."""

    state: tuple[str, ...]
    f: tuple[Expr, ...]
    g: tuple[tuple[Expr, ...], ...]
    h: tuple[Expr, ...]
    state_box: tuple[tuple[float, float], ...]
    output_names: tuple[str, ...] = ()

    def __post_init__(self):
        st = tuple(self.state)
        object.__setattr__(self, "state", st)
        object.__setattr__(self, "f", tuple(as_expr(e) for e in self.f))
        object.__setattr__(self, "g", tuple(tuple(as_expr(e) for e in row) for row in self.g))
        object.__setattr__(self, "h", tuple(as_expr(e) for e in self.h))
        object.__setattr__(self, "state_box", tuple((float(lo), float(hi)) for lo, hi in self.state_box))
        n, m = len(st), len(self.h)
        if len(set(st)) != n or n == 0:
            raise ValueError("state names must be distinct and nonempty")
        if len(self.f) != n or len(self.g) != n or len(self.state_box) != n:
            raise ValueError("f, g and state_box need one entry per state variable")
        if m == 0 or any(len(row) != m for row in self.g):
            raise ValueError("g must be n x m with m = number of outputs")
        used = free_vars(*self.f, *(e for row in self.g for e in row), *self.h)
        if not used <= set(st):
            raise ValueError(f"expressions use unknown variables {sorted(used - set(st))}")
        for lo, hi in self.state_box:
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError("state_box intervals must be finite with lo < hi")
        if not self.output_names:
            object.__setattr__(self, "output_names", tuple(f"y{i + 1}" for i in range(m)))
        if len(self.output_names) != m:
            raise ValueError("one output name per output")

    @property
    def n(self) -> int:
        return len(self.state)

    @property
    def m(self) -> int:
        return len(self.h)

    def g_column(self, j: int) -> tuple[Expr, ...]:
        return tuple(row[j] for row in self.g)

    @property
    def box_dict(self) -> dict[str, tuple[float, float]]:
        return dict(zip(self.state, self.state_box))

    def sample_box(self, count: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = np.array(self.state_box).T
        return lo + (hi - lo) * rng.random((count, self.n))

    @cached_property
    def _vector_field(self):
        return compile_exprs(list(self.f) + [e for row in self.g for e in row] + list(self.h), self.state)

    def evaluate_fields(self, x: np.ndarray):
        """Batched f (N,n), g (N,n,m), h (N,m) at states x (N,n)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = self._vector_field(*x.T)
        n, m = self.n, self.m
        f = np.stack(out[:n], axis=-1)
        g = np.stack(out[n:n + n * m], axis=-1).reshape(x.shape[0], n, m)
        h = np.stack(out[n + n * m:], axis=-1)
        return f, g, h

    @classmethod
    def single_integrator(cls, names: Sequence[str], box: Sequence[tuple[float, float]]) -> "ControlAffineSystem":
        names = tuple(names)
        k = len(names)
        return cls(
            state=names,
            f=tuple(0.0 for _ in names),
            g=tuple(tuple(1.0 if i == j else 0.0 for j in range(k)) for i in range(k)),
            h=tuple(Var(v) for v in names),
            state_box=tuple(box),
            output_names=names,
        )


def lie_derivative(scalar: Expr, field: Sequence[Expr], state: Sequence[str]) -> Expr:
    if len(field) != len(state):
        raise ValueError("field and state dimensions differ")
    return add(*(mul(differentiate(scalar, v), fk) for v, fk in zip(state, field)))


@dataclass(frozen=True)
class ZeroTestConfig:
    samples: int = 64
    seed: int = 0
    tol: float = 1e-9
    rank_samples: int = 64


@dataclass(frozen=True)
class RelativeDegreeProfile:
    r: tuple[int, ...]
    n: int

    def __post_init__(self):
        if any(k < 1 or k > self.n for k in self.r):
            raise ValueError(f"relative degrees {self.r} must lie in [1, {self.n}]")

    @property
    def sum_r(self) -> int:
        return sum(self.r)

    @property
    def fully_linearizable(self) -> bool:
        return self.sum_r == self.n


def _lie_tower(sys: ControlAffineSystem, i: int, depth: int) -> list[Expr]:
    out = [sys.h[i]]
    for _ in range(depth):
        out.append(lie_derivative(out[-1], sys.f, sys.state))
    return out


def vector_relative_degree(sys: ControlAffineSystem, cfg: ZeroTestConfig = ZeroTestConfig()) -> RelativeDegreeProfile:
    box = sys.box_dict
    r = []
    for i in range(sys.m):
        e = sys.h[i]
        for k in range(sys.n):
            lg = [lie_derivative(e, sys.g_column(j), sys.state) for j in range(sys.m)]
            if not all(is_identically_zero(x, cfg.samples, cfg.seed, cfg.tol, box) for x in lg):
                r.append(k + 1)
                break
            e = lie_derivative(e, sys.f, sys.state)
        else:
            raise RelativeDegreeUndefined(f"output {i + 1}: no input appears within n={sys.n} derivatives")
    profile = RelativeDegreeProfile(tuple(r), sys.n)
    dec = decoupling(sys, profile)
    pts = sys.sample_box(cfg.rank_samples, np.random.default_rng(cfg.seed))
    A = dec.evaluate_A(pts)
    bad = 0
    for Ak in A:
        if not np.all(np.isfinite(Ak)):
            bad += 1
            continue
        s = np.linalg.svd(Ak, compute_uv=False)
        if s[0] == 0 or s[-1] <= RANK_CUTOFF * s[0]:
            bad += 1
    if 2 * bad > len(A):
        raise RelativeDegreeUndefined(f"decoupling matrix rank-deficient at {bad}/{len(A)} sample points")
    return profile


def eta_name(i: int, s: int) -> str:
    """Symbol for the s-th derivative coordinate of output i (both 1-based)."""
    return f"eta{i}_{s}"


@dataclass(frozen=True)
class EtaMap:
    state: tuple[str, ...]
    chains: tuple[tuple[Expr, ...], ...]
    names: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        clash = set(self.flat_names) & set(self.state)
        if clash:
            raise ValueError(f"state variables {sorted(clash)} clash with transformed-coordinate names")

    @property
    def flat_names(self) -> tuple[str, ...]:
        return tuple(n for ch in self.names for n in ch)

    @property
    def flat_exprs(self) -> tuple[Expr, ...]:
        return tuple(e for ch in self.chains for e in ch)

    @property
    def gammas(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.chains)

    @property
    def fully_linearizable(self) -> bool:
        return sum(self.gammas) == len(self.state)

    @cached_property
    def _compiled(self):
        return compile_exprs(self.flat_exprs, self.state)

    @cached_property
    def _jac_compiled(self):
        jac = [differentiate(e, v) for e in self.flat_exprs for v in self.state]
        return compile_exprs(jac, self.state)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.stack(self._compiled(*x.T), axis=-1)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = len(self.flat_exprs)
        return np.stack(self._jac_compiled(*x.T), axis=-1).reshape(x.shape[0], k, len(self.state))


def build_eta_map(sys: ControlAffineSystem, profile: RelativeDegreeProfile) -> EtaMap:
    chains = tuple(tuple(_lie_tower(sys, i, r - 1)) for i, r in enumerate(profile.r))
    names = tuple(tuple(eta_name(i + 1, s + 1) for s in range(r)) for i, r in enumerate(profile.r))
    em = EtaMap(sys.state, chains, names)
    if not em.fully_linearizable:
        warnings.warn(
            f"sum of relative degrees {profile.sum_r} < n = {sys.n}: internal dynamics are not covered",
            stacklevel=2,
        )
    return em


@dataclass(frozen=True)
class DecouplingData:
    state: tuple[str, ...]
    A: tuple[tuple[Expr, ...], ...]
    Lfr: tuple[Expr, ...]

    @cached_property
    def _compiled(self):
        return compile_exprs([e for row in self.A for e in row] + list(self.Lfr), self.state)

    def evaluate(self, x: np.ndarray):
        """A (N,m,m) and L_f^r h (N,m) at states x (N,n)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = len(self.Lfr)
        out = self._compiled(*x.T)
        A = np.stack(out[: m * m], axis=-1).reshape(x.shape[0], m, m)
        lfr = np.stack(out[m * m:], axis=-1)
        return A, lfr

    def evaluate_A(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate(x)[0]


def decoupling(sys: ControlAffineSystem, profile: RelativeDegreeProfile) -> DecouplingData:
    A, lfr = [], []
    for i, r in enumerate(profile.r):
        top = _lie_tower(sys, i, r - 1)[-1]
        A.append(tuple(lie_derivative(top, sys.g_column(j), sys.state) for j in range(sys.m)))
        lfr.append(lie_derivative(top, sys.f, sys.state))
    return DecouplingData(sys.state, tuple(A), tuple(lfr))


def solve_decoupled(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Batched solve of A u = rhs; raises on (near-)singular A."""
    A = np.asarray(A, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(rhs))):
        raise SingularDecouplingError("decoupling data is not finite", 0.0)
    s = np.linalg.svd(A, compute_uv=False)
    smin = float(np.min(s[..., -1]))
    if smin < SINGULAR_TOL:
        raise SingularDecouplingError(f"decoupling matrix is singular (sigma_min = {smin:.3e})", smin)
    return np.linalg.solve(A, rhs[..., None])[..., 0]


def feedback_linearize(dec: DecouplingData, v_virtual: Sequence[float], x_point: Sequence[float]) -> np.ndarray:
    """u = A(x)^{-1} (v - L_f^r h(x)) at a single state."""
    A, lfr = dec.evaluate(np.asarray(x_point, dtype=float)[None, :])
    return solve_decoupled(A[0], np.asarray(v_virtual, dtype=float) - lfr[0])
