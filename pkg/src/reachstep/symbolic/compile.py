"""Vectorised numpy evaluation of expression lists.

The expressions are flattened into one straight-line Python function with a
temporary per unique DAG node, so shared subtrees (common in Lie-derivative
chains) are computed once.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .expr import Add, Const, Cos, Div, Expr, Mul, Pow, Sin, Var, _postorder

__all__ = ["compile_exprs", "CompiledExprs"]


class CompiledExprs:
    """Callable ``f(*columns) -> list[ndarray]``.

    Inputs may be scalars or arrays of a common broadcast shape; each output is
    broadcast to that shape.  Division by zero produces inf/nan (callers
    check finiteness); no exception is raised.
    """

    def __init__(self, exprs: Sequence[Expr], names: Sequence[str]):
        self.names = tuple(names)
        self.exprs = tuple(exprs)
        known = set(self.names)
        slot: dict[Expr, str] = {}
        lines = []
        for i, node in enumerate(_postorder(self.exprs)):
            if isinstance(node, Var):
                if node.name not in known:
                    raise KeyError(f"variable {node.name!r} is not among the inputs {self.names}")
                slot[node] = f"a{self.names.index(node.name)}"
                continue
            if isinstance(node, Const):
                slot[node] = repr(node.value)
                continue
            t = f"t{i}"
            if isinstance(node, Add):
                rhs = " + ".join([slot[a] for a in node.terms] + ([repr(node.constant)] if node.constant else []))
            elif isinstance(node, Mul):
                rhs = " * ".join(([repr(node.coeff)] if node.coeff != 1.0 else []) + [slot[a] for a in node.factors])
            elif isinstance(node, Pow):
                b = slot[node.base]
                # small powers as products: numpy's pow is far slower
                rhs = " * ".join([b] * node.exponent) if node.exponent <= 8 else f"{b} ** {node.exponent}"
            elif isinstance(node, Div):
                rhs = f"{slot[node.num]} / {slot[node.den]}"
            elif isinstance(node, Sin):
                rhs = f"_sin({slot[node.arg]})"
            elif isinstance(node, Cos):
                rhs = f"_cos({slot[node.arg]})"
            else:  # pragma: no cover
                raise TypeError(type(node))
            lines.append(f"    {t} = {rhs}")
            slot[node] = t
        args = ", ".join(f"a{k}" for k in range(len(self.names)))
        outs = ", ".join(slot[e] for e in self.exprs)
        src = f"def _f({args}):\n" + "\n".join(lines) + f"\n    return ({outs}{',' if len(self.exprs) == 1 else ''})\n"
        self.source = src
        env = {"_sin": np.sin, "_cos": np.cos}
        exec(compile(src, "<reachstep-compiled>", "exec"), env)
        self._fn: Callable = env["_f"]

    def __call__(self, *columns) -> list[np.ndarray]:
        cols = [np.asarray(c, dtype=float) for c in columns]
        if len(cols) != len(self.names):
            raise TypeError(f"expected {len(self.names)} inputs, got {len(cols)}")
        shape = np.broadcast(*cols).shape if cols else ()
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            raw = self._fn(*cols)
        return [np.broadcast_to(np.asarray(r, dtype=float), shape) for r in raw]

    def stacked(self, points: np.ndarray) -> np.ndarray:
        """Evaluate on an (N, len(names)) array; returns (N, len(exprs))."""
        points = np.asarray(points, dtype=float)
        out = self(*points.T)
        return np.stack(out, axis=-1) if out else np.zeros(points.shape[:-1] + (0,))


def compile_exprs(exprs: Sequence[Expr], names: Sequence[str]) -> CompiledExprs:
    return CompiledExprs(exprs, names)
