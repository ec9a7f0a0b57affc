"""Sparse multivariate polynomials with float coefficients.

A :class:`Polynomial` is tied to an ordered tuple of variable names; the
exponent vectors stored in ``terms`` have one entry per name.  Zero
coefficients are never stored, so the zero polynomial has ``terms == {}``
and degree ``NEG_INF``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

from .expr import Add, Const, Cos, Div, Expr, Mul, Pow, Sin, Var, _postorder, add, evaluate, free_vars, mul, power

__all__ = [
    "Polynomial", "NotPolynomial", "NEG_INF", "to_polynomial", "is_identically_zero",
    "monomial_basis",
]

NEG_INF = float("-inf")

Monomial = tuple[int, ...]


class Polynomial:
    __slots__ = ("vars", "terms", "_key")

    def __init__(self, vars: Sequence[str], terms: Mapping[Monomial, float] | None = None):
        self.vars = tuple(vars)
        if len(set(self.vars)) != len(self.vars):
            raise ValueError(f"duplicate variable names in {self.vars}")
        n = len(self.vars)
        clean: dict[Monomial, float] = {}
        for mono, c in (terms or {}).items():
            mono = tuple(int(k) for k in mono)
            if len(mono) != n or any(k < 0 for k in mono):
                raise ValueError(f"bad exponent vector {mono} for variables {self.vars}")
            c = float(c)
            if not math.isfinite(c):
                raise ValueError("polynomial coefficients must be finite")
            if c != 0.0:
                clean[mono] = c
        self.terms = clean
        self._key = None

    # constructors ---------------------------------------------------------
    @classmethod
    def constant(cls, vars: Sequence[str], c: float) -> "Polynomial":
        return cls(vars, {(0,) * len(tuple(vars)): c})

    @classmethod
    def variable(cls, vars: Sequence[str], name: str) -> "Polynomial":
        vars = tuple(vars)
        mono = tuple(1 if v == name else 0 for v in vars)
        if sum(mono) != 1:
            raise KeyError(name)
        return cls(vars, {mono: 1.0})

    # basic queries --------------------------------------------------------
    @property
    def degree(self) -> float | int:
        if not self.terms:
            return NEG_INF
        return max(sum(m) for m in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return all(sum(m) == 0 for m in self.terms)

    def coefficient(self, mono: Monomial) -> float:
        return self.terms.get(tuple(mono), 0.0)

    def monomials(self) -> list[Monomial]:
        return sorted(self.terms, key=_grlex_key)

    def max_abs_coefficient(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def _check(self, other: "Polynomial") -> None:
        if self.vars != other.vars:
            raise ValueError(f"variable tables differ: {self.vars} vs {other.vars}")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float)) and not isinstance(other, bool):
            return Polynomial.constant(self.vars, other)
        return NotImplemented

    # ring operations -----------------------------------------------------
    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(self.vars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.vars, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[Monomial, float] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                out[m] = out.get(m, 0.0) + c1 * c2
        return Polynomial(self.vars, out)

    __rmul__ = __mul__

    def scale(self, c: float) -> "Polynomial":
        return Polynomial(self.vars, {m: c * v for m, v in self.terms.items()})

    def __pow__(self, n: int):
        if isinstance(n, bool) or not isinstance(n, int) or n < 0:
            raise ValueError("polynomial powers need a nonnegative integer")
        result = Polynomial.constant(self.vars, 1.0)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def __eq__(self, other) -> bool:
        return isinstance(other, Polynomial) and self.vars == other.vars and self.terms == other.terms

    def __hash__(self) -> int:
        if self._key is None:
            self._key = hash((self.vars, frozenset(self.terms.items())))
        return self._key

    def __repr__(self) -> str:
        return f"Polynomial({self.vars}, {dict(sorted(self.terms.items(), key=lambda kv: _grlex_key(kv[0])))})"

    # calculus / evaluation ----------------------------------------------
    def diff(self, name: str) -> "Polynomial":
        k = self.vars.index(name)
        out = {}
        for m, c in self.terms.items():
            if m[k]:
                nm = list(m)
                nm[k] -= 1
                out[tuple(nm)] = c * m[k]
        return Polynomial(self.vars, out)

    def __call__(self, *values):
        """Evaluate; accepts scalars or broadcastable numpy arrays."""
        if len(values) != len(self.vars):
            raise TypeError(f"expected {len(self.vars)} values, got {len(values)}")
        vals = [np.asarray(v, dtype=float) for v in values]
        total = np.zeros(np.broadcast(*vals).shape) if vals else np.zeros(())
        for m, c in self.terms.items():
            t = c
            for v, k in zip(vals, m):
                if k:
                    t = t * v**k
            total = total + t
        return total if total.shape else float(total)

    def evaluate(self, point: Mapping[str, float]) -> float:
        return float(self(*(point[v] for v in self.vars)))

    def with_vars(self, vars: Sequence[str]) -> "Polynomial":
        """Re-embed into a (super)set of variables."""
        vars = tuple(vars)
        pos = []
        for v, col in zip(self.vars, zip(*self.terms) if self.terms else [()] * len(self.vars)):
            if v not in vars:
                if any(col):
                    raise ValueError(f"variable {v!r} is used but missing from {vars}")
                pos.append(None)
            else:
                pos.append(vars.index(v))
        out = {}
        for m, c in self.terms.items():
            nm = [0] * len(vars)
            for p, k in zip(pos, m):
                if p is not None:
                    nm[p] = k
            out[tuple(nm)] = c
        return Polynomial(vars, out)

    def rename(self, mapping: Mapping[str, str]) -> "Polynomial":
        return Polynomial(tuple(mapping.get(v, v) for v in self.vars), self.terms)

    def to_expr(self) -> Expr:
        parts = []
        for m in self.monomials():
            factors = [power(Var(v), k) for v, k in zip(self.vars, m) if k]
            parts.append(mul(self.terms[m], *factors))
        return add(*parts)


def _grlex_key(mono: Monomial):
    return (sum(mono), tuple(-k for k in mono))


def monomial_basis(nvars: int, degree: int) -> list[Monomial]:
    """All exponent vectors of total degree <= ``degree`` in graded-lex order.

    Within a degree, higher powers of earlier variables come first, so for two
    variables and degree 2 the order is 1, y1, y2, y1^2, y1*y2, y2^2.
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    out: list[Monomial] = []
    for d in range(degree + 1):
        layer = []
        for combo in combinations_with_replacement(range(nvars), d):
            m = [0] * nvars
            for i in combo:
                m[i] += 1
            layer.append(tuple(m))
        out.extend(layer)  # combinations are emitted in exactly this order
    return out


@dataclass(frozen=True)
class NotPolynomial:
    """Returned by :func:`to_polynomial` when the tree is not polynomial."""

    reason: str
    node: Expr

    def __bool__(self) -> bool:
        return False


def to_polynomial(e: Expr, vars: Sequence[str] | None = None) -> Polynomial | NotPolynomial:
    """Expand ``e`` into canonical polynomial form over ``vars``.

    ``vars`` defaults to the sorted free variables.  Division by an expression
    with variables, or sin/cos of a non-constant, yields :class:`NotPolynomial`.
    """
    if vars is None:
        vars = sorted(free_vars(e))
    vars = tuple(vars)
    missing = free_vars(e) - set(vars)
    if missing:
        raise ValueError(f"variables {sorted(missing)} are not in {vars}")
    polys: dict[Expr, Polynomial] = {}
    for node in _postorder([e]):
        if isinstance(node, Const):
            p = Polynomial.constant(vars, node.value)
        elif isinstance(node, Var):
            p = Polynomial.variable(vars, node.name)
        elif isinstance(node, Add):
            p = Polynomial.constant(vars, node.constant)
            for t in node.terms:
                p = p + polys[t]
        elif isinstance(node, Mul):
            p = Polynomial.constant(vars, node.coeff)
            for f in node.factors:
                p = p * polys[f]
        elif isinstance(node, Pow):
            p = polys[node.base] ** node.exponent
        elif isinstance(node, Div):
            den = polys[node.den]
            if not den.is_constant():
                return NotPolynomial("division by a non-constant expression", node)
            p = polys[node.num].scale(1.0 / den.coefficient((0,) * len(vars)))
        elif isinstance(node, (Sin, Cos)):
            arg = polys[node.arg]
            if not arg.is_constant():
                return NotPolynomial(f"{node.fname} of a non-constant argument", node)
            c = arg.coefficient((0,) * len(vars))
            p = Polynomial.constant(vars, math.sin(c) if isinstance(node, Sin) else math.cos(c))
        else:  # pragma: no cover
            raise TypeError(type(node))
        polys[node] = p
    return polys[e]


def is_identically_zero(
    e: Expr,
    samples: int = 64,
    seed: int = 0,
    tol: float = 1e-9,
    box: Mapping[str, tuple[float, float]] | None = None,
) -> bool:
    """Decide ``e == 0`` on a box.

    Polynomials are decided from their coefficients: the answer is true when
    sum |c_a| * max_box |x^a| <= tol, which is a sound bound on |e| over the
    box and is exactly "no terms" for tol = 0.  Anything else is sampled at
    ``samples`` seeded points.  Either way a nonzero function whose magnitude
    stays below ``tol`` on the box (``1e-12 * x``, say) is reported as zero.
    Unlisted variables use the box [-1, 1].
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    names = sorted(free_vars(e))
    bounds = [tuple(box[v]) if box and v in box else (-1.0, 1.0) for v in names]
    p = to_polynomial(e, names)
    if isinstance(p, Polynomial):
        if p.is_zero():
            return True
        reach = [max(abs(lo), abs(hi)) for lo, hi in bounds]
        bound = sum(abs(c) * math.prod(r**k for r, k in zip(reach, m)) for m, c in p.terms.items())
        return bound <= tol
    from .compile import compile_exprs

    rng = np.random.default_rng(seed)
    cols = [rng.uniform(lo, hi, samples) for lo, hi in bounds]
    with np.errstate(all="ignore"):
        vals = compile_exprs([e], names)(*cols)[0]
    vals = np.broadcast_to(vals, (samples,))
    if not np.all(np.isfinite(vals)):
        # fall back to exact scalar evaluation to surface the singular point
        for i in range(samples):
            evaluate(e, {v: c[i] for v, c in zip(names, cols)})
    return bool(np.max(np.abs(vals)) <= tol)
