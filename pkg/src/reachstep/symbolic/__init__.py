"""Symbolic expressions, polynomials and their numeric evaluation."""
from .compile import CompiledExprs, compile_exprs
from .expr import (
    Add, Const, Cos, Div, EvaluationError, Expr, Mul, ONE, Pow, Sin, Var, ZERO, add, as_expr, const, cos,
    differentiate, div, evaluate, free_vars, gradient, mul, neg, node_count, power, scale, sin, sub,
    substitute, var,
)
from .polynomial import NEG_INF, NotPolynomial, Polynomial, is_identically_zero, monomial_basis, to_polynomial
from .printing import ExpressionSyntaxError, parse, to_string

__all__ = [
    "Add", "Const", "Cos", "Div", "EvaluationError", "Expr", "Mul", "ONE", "Pow", "Sin", "Var", "ZERO",
    "add", "as_expr", "const", "cos", "differentiate", "div", "evaluate", "free_vars", "gradient", "mul",
    "neg", "node_count", "power", "scale", "sin", "sub", "substitute", "var",
    "NEG_INF", "NotPolynomial", "Polynomial", "is_identically_zero", "monomial_basis", "to_polynomial",
    "ExpressionSyntaxError", "parse", "to_string", "CompiledExprs", "compile_exprs",
]
