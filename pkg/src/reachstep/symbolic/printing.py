"""Infix text form of expressions and its parser.

Grammar: ``+ - * / ^``, calls ``sin(...)``/``cos(...)``, decimal literals,
identifiers ``[A-Za-z_][A-Za-z0-9_]*``; ``^`` takes a nonnegative integer
literal.  ``to_string`` output always re-parses to an equal expression.
"""
from __future__ import annotations

import ast
import math
import re

from .expr import Add, Const, Cos, Div, Expr, Mul, Pow, Sin, Var, add, cos, div, mul, neg, power, sin, sub

__all__ = ["to_string", "parse", "ExpressionSyntaxError"]

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class ExpressionSyntaxError(ValueError):
    def __init__(self, message: str, text: str, position: int):
        super().__init__(f"{message} at column {position + 1}: {text!r}")
        self.text = text
        self.position = position


def _num(x: float) -> str:
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def _fmt(e: Expr) -> tuple[str, int]:
    if isinstance(e, Const):
        s = _num(e.value)
        return s, (_PREC_UNARY if e.value < 0 else _PREC_ATOM)
    if isinstance(e, Var):
        return e.name, _PREC_ATOM
    if isinstance(e, (Sin, Cos)):
        return f"{e.fname}({_fmt(e.arg)[0]})", _PREC_ATOM
    if isinstance(e, Pow):
        s, p = _fmt(e.base)
        if p <= _PREC_POW:
            s = f"({s})"
        return f"{s}^{e.exponent}", _PREC_POW
    if isinstance(e, Mul):
        parts = []
        for f in e.factors:
            s, p = _fmt(f)
            parts.append(f"({s})" if p < _PREC_MUL or isinstance(f, Div) else s)
        body = "*".join(parts)
        if e.coeff == 1.0:
            return body, _PREC_MUL
        if e.coeff == -1.0:
            return f"-{body}", _PREC_MUL
        return f"{_num(e.coeff)}*{body}", _PREC_MUL
    if isinstance(e, Div):
        n, pn = _fmt(e.num)
        d, pd = _fmt(e.den)
        if pn < _PREC_MUL:
            n = f"({n})"
        if pd <= _PREC_MUL:
            d = f"({d})"
        return f"{n}/{d}", _PREC_MUL
    if isinstance(e, Add):
        out = []
        for i, t in enumerate(e.terms):
            if i == 0:
                out.append(_fmt(t)[0])
            elif isinstance(t, Mul) and t.coeff < 0:
                out.append(f" - {_fmt(Mul(-t.coeff, t.factors))[0]}")
            else:
                out.append(f" + {_fmt(t)[0]}")
        if e.constant != 0.0:
            c = _num(e.constant)
            out.append(f" - {c[1:]}" if c.startswith("-") else f" + {c}")
        return "".join(out), _PREC_ADD
    raise TypeError(type(e))  # pragma: no cover


def to_string(e: Expr) -> str:
    return _fmt(e)[0]


# ---------------------------------------------------------------------------


def parse(text: str) -> Expr:
    """Parse the infix grammar into a simplified expression."""
    if "**" in text:
        raise ExpressionSyntaxError("'**' is not part of the grammar; use '^'", text, text.index("**"))
    bad = re.search(r"[^A-Za-z0-9_+\-*/^().\s]", text)
    if bad:
        raise ExpressionSyntaxError(f"unexpected character {bad.group()!r}", text, bad.start())
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ExpressionSyntaxError("syntax error", text, max((exc.offset or 1) - 1, 0)) from None
    return _convert(tree.body, text)


def _pos(node: ast.AST) -> int:
    return getattr(node, "col_offset", 0)


def _convert(node: ast.AST, text: str) -> Expr:
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionSyntaxError("expected a decimal literal", text, _pos(node))
        if not math.isfinite(float(node.value)):
            raise ExpressionSyntaxError("literal is not finite", text, _pos(node))
        return Const(float(node.value))
    if isinstance(node, ast.Name):
        if not _IDENT.match(node.id):
            raise ExpressionSyntaxError("invalid identifier", text, _pos(node))
        return Var(node.id)
    if isinstance(node, ast.UnaryOp):
        operand = _convert(node.operand, text)
        if isinstance(node.op, ast.USub):
            return neg(operand)
        if isinstance(node.op, ast.UAdd):
            return operand
        raise ExpressionSyntaxError("unsupported unary operator", text, _pos(node))
    if isinstance(node, ast.BinOp):
        if isinstance(node.op, ast.Pow):
            exp = node.right
            if not (isinstance(exp, ast.Constant) and isinstance(exp.value, int)
                    and not isinstance(exp.value, bool) and exp.value >= 0):
                raise ExpressionSyntaxError("'^' needs a nonnegative integer literal", text, _pos(exp))
            return power(_convert(node.left, text), exp.value)
        left, right = _convert(node.left, text), _convert(node.right, text)
        if isinstance(node.op, ast.Add):
            return add(left, right)
        if isinstance(node.op, ast.Sub):
            return sub(left, right)
        if isinstance(node.op, ast.Mult):
            return mul(left, right)
        if isinstance(node.op, ast.Div):
            try:
                return div(left, right)
            except ZeroDivisionError:
                raise ExpressionSyntaxError("division by the constant zero", text, _pos(node.right)) from None
        raise ExpressionSyntaxError("unsupported operator", text, _pos(node))
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in ("sin", "cos"):
            raise ExpressionSyntaxError("only sin(...) and cos(...) calls are allowed", text, _pos(node))
        if len(node.args) != 1 or node.keywords:
            raise ExpressionSyntaxError(f"{node.func.id} takes exactly one argument", text, _pos(node))
        arg = _convert(node.args[0], text)
        return sin(arg) if node.func.id == "sin" else cos(arg)
    raise ExpressionSyntaxError(f"unsupported syntax ({type(node).__name__})", text, _pos(node))
