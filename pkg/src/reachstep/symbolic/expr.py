"""Immutable expression trees over named real variables.

Nodes are built through the smart constructors (``add``, ``mul``, ``power``,
``div``, ``sin``, ``cos``) which apply local simplification: constant folding,
identity/annihilator elimination, like-term and like-factor collection, and
power flattening.  Nothing global (no trig canonicalisation) is attempted.

Every node carries a 128-bit structural digest.  Equality, hashing and the
ordering of commutative arguments are all derived from it, so construction is
deterministic across processes regardless of ``PYTHONHASHSEED``.
"""
from __future__ import annotations

import hashlib
import math
import struct
from typing import Iterable, Mapping

__all__ = [
    "Expr", "Const", "Var", "Add", "Mul", "Pow", "Div", "Sin", "Cos",
    "EvaluationError", "ZERO", "ONE", "const", "var", "as_expr",
    "add", "mul", "neg", "sub", "scale", "power", "div", "sin", "cos",
    "free_vars", "differentiate", "gradient", "evaluate", "substitute",
    "node_count",
]


class EvaluationError(ArithmeticError):
    """Raised when numeric evaluation hits a zero denominator."""

    def __init__(self, message: str, subexpression: "Expr"):
        super().__init__(message)
        self.subexpression = subexpression


def _digest(*parts: bytes) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for p in parts:
        h.update(len(p).to_bytes(4, "little"))
        h.update(p)
    return h.digest()


def _fbytes(x: float) -> bytes:
    return struct.pack("<d", x)


class Expr:
    __slots__ = ("_digest", "_hash")
    # rank used for deterministic ordering of commutative arguments
    _rank = 9

    def _init(self, digest: bytes) -> None:
        self._digest = digest
        self._hash = int.from_bytes(digest[:8], "little", signed=True)

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Expr) and self._digest == other._digest

    def sort_key(self):
        return (self._rank, self._digest)

    @property
    def args(self) -> tuple["Expr", ...]:
        return ()

    def is_const(self, value: float | None = None) -> bool:
        return False

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pos__(self):
        return self

    def __pow__(self, n):
        if isinstance(n, bool) or not isinstance(n, int):
            raise TypeError("only nonnegative integer exponents are supported")
        return power(self, n)

    def __repr__(self) -> str:
        from .printing import to_string

        return f"Expr({to_string(self)!r})"

    def __str__(self) -> str:
        from .printing import to_string

        return to_string(self)


class Const(Expr):
    __slots__ = ("value",)
    _rank = 0

    def __init__(self, value: float):
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"constants must be finite, got {value}")
        if value == 0.0:
            value = 0.0  # drop the sign of -0.0
        self.value = value
        self._init(_digest(b"c", _fbytes(value)))

    def is_const(self, value: float | None = None) -> bool:
        return value is None or self.value == value


class Var(Expr):
    __slots__ = ("name",)
    _rank = 1

    def __init__(self, name: str):
        self.name = name
        self._init(_digest(b"v", name.encode()))

    def sort_key(self):
        return (self._rank, self.name.encode())


class Add(Expr):
    """constant + sum(terms); terms are non-constant and pairwise distinct."""

    __slots__ = ("constant", "terms")
    _rank = 5

    def __init__(self, constant: float, terms: tuple[Expr, ...]):
        self.constant = constant
        self.terms = terms
        self._init(_digest(b"+", _fbytes(constant), *(t._digest for t in terms)))

    @property
    def args(self):
        return self.terms


class Mul(Expr):
    """coefficient * prod(factors); factors are non-constant, distinct bases."""

    __slots__ = ("coeff", "factors")
    _rank = 4

    def __init__(self, coeff: float, factors: tuple[Expr, ...]):
        self.coeff = coeff
        self.factors = factors
        self._init(_digest(b"*", _fbytes(coeff), *(f._digest for f in factors)))

    @property
    def args(self):
        return self.factors


class Pow(Expr):
    __slots__ = ("base", "exponent")
    _rank = 3

    def __init__(self, base: Expr, exponent: int):
        self.base = base
        self.exponent = exponent
        self._init(_digest(b"^", base._digest, str(exponent).encode()))

    @property
    def args(self):
        return (self.base,)


class Div(Expr):
    __slots__ = ("num", "den")
    _rank = 6

    def __init__(self, num: Expr, den: Expr):
        self.num = num
        self.den = den
        self._init(_digest(b"/", num._digest, den._digest))

    @property
    def args(self):
        return (self.num, self.den)


class _Func(Expr):
    __slots__ = ("arg",)
    _rank = 2
    fname = ""

    def __init__(self, arg: Expr):
        self.arg = arg
        self._init(_digest(self.fname.encode(), arg._digest))

    @property
    def args(self):
        return (self.arg,)


class Sin(_Func):
    __slots__ = ()
    fname = "sin"


class Cos(_Func):
    __slots__ = ()
    fname = "cos"


ZERO = Const(0.0)
ONE = Const(1.0)


def const(value: float) -> Const:
    return Const(value)


def var(name: str) -> Var:
    return Var(name)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return Const(value)
    # numpy scalars
    try:
        return Const(float(value))
    except (TypeError, ValueError):
        raise TypeError(f"cannot convert {type(value).__name__} to an expression") from None


# ---------------------------------------------------------------------------
# smart constructors


def _split_coeff(term: Expr) -> tuple[float, Expr]:
    if isinstance(term, Mul):
        if term.coeff == 1.0:
            return 1.0, term
        if len(term.factors) == 1:
            return term.coeff, term.factors[0]
        return term.coeff, Mul(1.0, term.factors)
    return 1.0, term


def _scaled(c: float, rest: Expr) -> Expr:
    if c == 1.0:
        return rest
    if isinstance(rest, Mul):
        return Mul(c * rest.coeff, rest.factors)
    return Mul(c, (rest,))


def add(*terms) -> Expr:
    constant = 0.0
    collected: dict[Expr, float] = {}
    stack = [as_expr(t) for t in reversed(terms)]
    while stack:
        t = stack.pop()
        if isinstance(t, Const):
            constant += t.value
        elif isinstance(t, Add):
            constant += t.constant
            stack.extend(reversed(t.terms))
        else:
            c, rest = _split_coeff(t)
            collected[rest] = collected.get(rest, 0.0) + c
    out = [_scaled(c, r) for r, c in collected.items() if c != 0.0]
    if not out:
        return Const(constant)
    if len(out) == 1 and constant == 0.0:
        return out[0]
    out.sort(key=Expr.sort_key)
    return Add(constant + 0.0, tuple(out))


def mul(*factors) -> Expr:
    coeff = 1.0
    powers: dict[Expr, int] = {}
    stack = [as_expr(f) for f in reversed(factors)]
    while stack:
        f = stack.pop()
        if isinstance(f, Const):
            coeff *= f.value
        elif isinstance(f, Mul):
            coeff *= f.coeff
            stack.extend(reversed(f.factors))
        elif isinstance(f, Pow):
            powers[f.base] = powers.get(f.base, 0) + f.exponent
        else:
            powers[f] = powers.get(f, 0) + 1
    if coeff == 0.0:
        return ZERO
    if not math.isfinite(coeff):
        raise OverflowError("constant product overflowed")
    out = [b if e == 1 else Pow(b, e) for b, e in powers.items() if e != 0]
    if not out:
        return Const(coeff)
    if len(out) == 1 and coeff == 1.0:
        return out[0]
    out.sort(key=Expr.sort_key)
    return Mul(coeff, tuple(out))


def neg(a) -> Expr:
    return mul(-1.0, a)


def sub(a, b) -> Expr:
    return add(a, neg(b))


def scale(a, c: float) -> Expr:
    return mul(float(c), a)


def power(base, n: int) -> Expr:
    base = as_expr(base)
    if n < 0:
        raise ValueError("negative exponents are not supported; use div")
    if n == 0:
        return ONE
    if n == 1:
        return base
    if isinstance(base, Const):
        return Const(base.value ** n)
    if isinstance(base, Pow):
        return Pow(base.base, base.exponent * n)
    if isinstance(base, Mul):
        return mul(Const(base.coeff ** n), *(power(f, n) for f in base.factors))
    return Pow(base, n)


def div(a, b) -> Expr:
    a, b = as_expr(a), as_expr(b)
    if isinstance(b, Const):
        if b.value == 0.0:
            raise ZeroDivisionError("division by the constant zero")
        return mul(1.0 / b.value, a) if b.value != 1.0 else a
    if a.is_const(0.0):
        return ZERO
    return Div(a, b)


def sin(a) -> Expr:
    a = as_expr(a)
    if isinstance(a, Const):
        return Const(math.sin(a.value))
    return Sin(a)


def cos(a) -> Expr:
    a = as_expr(a)
    if isinstance(a, Const):
        return Const(math.cos(a.value))
    return Cos(a)


# ---------------------------------------------------------------------------
# traversal helpers


def _postorder(roots: Iterable[Expr]) -> list[Expr]:
    """Unique nodes of the DAG below ``roots``, children before parents."""
    seen: set[Expr] = set()
    order: list[Expr] = []
    for root in roots:
        if root in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node in seen:
                continue
            seen.add(node)
            stack.append((node, True))
            for child in node.args:
                if child not in seen:
                    stack.append((child, False))
    return order


def _rebuild(node: Expr, args: list[Expr]) -> Expr:
    if isinstance(node, Add):
        return add(node.constant, *args)
    if isinstance(node, Mul):
        return mul(node.coeff, *args)
    if isinstance(node, Pow):
        return power(args[0], node.exponent)
    if isinstance(node, Div):
        return div(args[0], args[1])
    if isinstance(node, Sin):
        return sin(args[0])
    if isinstance(node, Cos):
        return cos(args[0])
    return node


def node_count(*roots: Expr) -> int:
    return len(_postorder(roots))


def free_vars(*roots: Expr) -> set[str]:
    return {n.name for n in _postorder(roots) if isinstance(n, Var)}


def differentiate(e: Expr, v: str | Var, _memo: dict | None = None) -> Expr:
    """Partial derivative of ``e`` with respect to variable ``v``."""
    name = v.name if isinstance(v, Var) else v
    memo: dict[Expr, Expr] = {} if _memo is None else _memo
    for node in _postorder([e]):
        if node in memo:
            continue
        if isinstance(node, Const):
            d = ZERO
        elif isinstance(node, Var):
            d = ONE if node.name == name else ZERO
        elif isinstance(node, Add):
            d = add(*(memo[t] for t in node.terms))
        elif isinstance(node, Mul):
            parts = []
            fs = node.factors
            for i, f in enumerate(fs):
                df = memo[f]
                if df.is_const(0.0):
                    continue
                parts.append(mul(node.coeff, df, *fs[:i], *fs[i + 1:]))
            d = add(*parts)
        elif isinstance(node, Pow):
            db = memo[node.base]
            d = ZERO if db.is_const(0.0) else mul(
                node.exponent, power(node.base, node.exponent - 1), db)
        elif isinstance(node, Div):
            dn, dd = memo[node.num], memo[node.den]
            if dd.is_const(0.0):
                d = div(dn, node.den)
            else:
                d = div(sub(mul(dn, node.den), mul(node.num, dd)), power(node.den, 2))
        elif isinstance(node, Sin):
            da = memo[node.arg]
            d = ZERO if da.is_const(0.0) else mul(cos(node.arg), da)
        elif isinstance(node, Cos):
            da = memo[node.arg]
            d = ZERO if da.is_const(0.0) else neg(mul(sin(node.arg), da))
        else:  # pragma: no cover
            raise TypeError(type(node))
        memo[node] = d
    return memo[e]


def gradient(e: Expr, names: Iterable[str]) -> list[Expr]:
    return [differentiate(e, n) for n in names]


def evaluate(e: Expr, point: Mapping[str, float]) -> float:
    """IEEE double evaluation at a single point."""
    vals: dict[Expr, float] = {}
    for node in _postorder([e]):
        if isinstance(node, Const):
            r = node.value
        elif isinstance(node, Var):
            try:
                r = float(point[node.name])
            except KeyError:
                raise KeyError(f"variable {node.name!r} is not bound") from None
        elif isinstance(node, Add):
            r = node.constant
            for t in node.terms:
                r += vals[t]
        elif isinstance(node, Mul):
            r = node.coeff
            for f in node.factors:
                r *= vals[f]
        elif isinstance(node, Pow):
            r = vals[node.base] ** node.exponent
        elif isinstance(node, Div):
            den = vals[node.den]
            if den == 0.0:
                raise EvaluationError(f"division by zero in {node}", node)
            r = vals[node.num] / den
        elif isinstance(node, Sin):
            r = math.sin(vals[node.arg])
        elif isinstance(node, Cos):
            r = math.cos(vals[node.arg])
        else:  # pragma: no cover
            raise TypeError(type(node))
        vals[node] = r
    return vals[e]


def substitute(e: Expr, bindings: Mapping[str, object]) -> Expr:
    """Simultaneous substitution of variables by expressions."""
    repl = {name: as_expr(val) for name, val in bindings.items()}
    out: dict[Expr, Expr] = {}
    for node in _postorder([e]):
        if isinstance(node, Var):
            out[node] = repl.get(node.name, node)
        elif isinstance(node, Const):
            out[node] = node
        else:
            args = [out[a] for a in node.args]
            if all(a is b for a, b in zip(args, node.args)):
                out[node] = node
            else:
                out[node] = _rebuild(node, args)
    return out[e]
