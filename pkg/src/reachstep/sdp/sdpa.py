"""SDPA sparse input (``.dat-s``) and SDPA output-layout files.

Correspondence with SDPA's own primal/dual pair (SDPA minimises c'x subject
to sum F_i x_i - F_0 >= 0):

    F_i = A_i,  c = b,  F_0 = -C,  SDPA Y = X,  SDPA x = -y,  SDPA X = Z.

So our objective <C, X> equals ``-objValDual`` and b'y equals ``-objValPrimal``.
Free scalars are written through :meth:`SdpProblem.standard_form`.
"""
from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np

from .problem import DegenerateProblemError, SdpProblem, SdpSolution, SdpStatus

__all__ = ["export_sdpa", "read_sdpa", "import_solution", "write_solution", "SdpaParseError", "format_sdpa"]


class SdpaParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _g(x: float) -> str:
    x = float(x)
    return "0" if x == 0.0 else f"{x:.17g}"


def _entries(block_size: int, mat: np.ndarray):
    if block_size > 0:
        n = block_size
        for i in range(n):
            for j in range(i, n):
                if mat[i, j] != 0.0:
                    yield i + 1, j + 1, mat[i, j]
    else:
        for i, v in enumerate(mat):
            if v != 0.0:
                yield i + 1, i + 1, v


def format_sdpa(problem: SdpProblem) -> str:
    if problem.is_empty():
        raise DegenerateProblemError("cannot export a problem without constraints or variables")
    p = problem.standard_form()
    lines = [
        str(p.m),
        str(len(p.block_sizes)),
        " ".join(str(s) for s in p.block_sizes),
        " ".join(_g(v) for v in p.b),
    ]
    for k, (s, ck) in enumerate(zip(p.block_sizes, p.c), start=1):
        for i, j, v in _entries(s, -ck):
            lines.append(f"0 {k} {i} {j} {_g(v)}")
    for r in range(p.m):
        for k, (s, ak) in enumerate(zip(p.block_sizes, p.a), start=1):
            for i, j, v in _entries(s, ak[r]):
                lines.append(f"{r + 1} {k} {i} {j} {_g(v)}")
    return "\n".join(lines) + "\n"


def export_sdpa(problem: SdpProblem, path: str | os.PathLike) -> Path:
    path = Path(path)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_sdpa(problem))
    return path


def read_sdpa(path: str | os.PathLike) -> SdpProblem:
    """Parse a ``.dat-s`` file back into an :class:`SdpProblem`."""
    raw = Path(path).read_text().splitlines()
    rows = []
    for no, line in enumerate(raw, start=1):
        s = line.strip()
        if not s or s[0] in '"*':
            continue
        rows.append((no, re.sub(r"[{}(),]", " ", s).split()))

    def ints(idx, count=None):
        no, toks = rows[idx]
        try:
            vals = [int(t) for t in toks]
        except ValueError:
            raise SdpaParseError("expected integers", no) from None
        if count is not None and len(vals) < count:
            raise SdpaParseError(f"expected {count} integers", no)
        return vals

    if len(rows) < 4:
        raise SdpaParseError("truncated header", len(raw))
    m = ints(0, 1)[0]
    nb = ints(1, 1)[0]
    sizes = ints(2, nb)[:nb]
    if any(s == 0 for s in sizes):
        raise SdpaParseError("zero block size", rows[2][0])
    try:
        b = np.array([float(t) for t in rows[3][1]], dtype=float)
    except ValueError:
        raise SdpaParseError("bad b vector", rows[3][0]) from None
    if b.size != m:
        raise SdpaParseError(f"b has {b.size} entries, expected {m}", rows[3][0])
    c = [np.zeros((s, s)) if s > 0 else np.zeros(-s) for s in sizes]
    a = [np.zeros((m, s, s)) if s > 0 else np.zeros((m, -s)) for s in sizes]
    for no, toks in rows[4:]:
        if len(toks) != 5:
            raise SdpaParseError("expected 'matno blkno i j value'", no)
        try:
            mat, blk, i, j = (int(t) for t in toks[:4])
            v = float(toks[4])
        except ValueError:
            raise SdpaParseError("malformed entry", no) from None
        if not (0 <= mat <= m and 1 <= blk <= nb):
            raise SdpaParseError("matrix or block index out of range", no)
        s = sizes[blk - 1]
        n = abs(s)
        if not (1 <= i <= n and 1 <= j <= n) or (s < 0 and i != j):
            raise SdpaParseError("entry index out of range", no)
        i, j = i - 1, j - 1
        if mat == 0:
            tgt, sign = c[blk - 1], -1.0
        else:
            tgt, sign = a[blk - 1][mat - 1], 1.0
        if s > 0:
            tgt[i, j] = sign * v
            tgt[j, i] = sign * v
        else:
            tgt[i] = sign * v
    return SdpProblem(tuple(sizes), c, a, b)


# --- solver output layout -------------------------------------------------

_PHASE_TO_STATUS = {
    "pdOPT": SdpStatus.OPTIMAL,
    "pUNBD": SdpStatus.INFEASIBLE,
    "pFEAS_dINF": SdpStatus.INFEASIBLE,
    "pdINF": SdpStatus.INFEASIBLE,
    "dUNBD": SdpStatus.DUAL_INFEASIBLE,
    "pINF_dFEAS": SdpStatus.DUAL_INFEASIBLE,
}
_STATUS_TO_PHASE = {
    SdpStatus.OPTIMAL: "pdOPT",
    SdpStatus.INFEASIBLE: "pFEAS_dINF",
    SdpStatus.DUAL_INFEASIBLE: "pINF_dFEAS",
    SdpStatus.NUMERICAL_FAILURE: "noINFO",
    SdpStatus.ITERATION_LIMIT: "noINFO",
}


def _fmt_block(s: int, mat: np.ndarray) -> str:
    if s < 0:
        return "{" + ",".join(f"{v:+.16e}" for v in mat) + "}"
    rows = ["{" + ",".join(f"{v:+.16e}" for v in r) + "}" for r in mat]
    return "{ " + ", ".join(rows) + " }"


def write_solution(sol: SdpSolution, block_sizes, path: str | os.PathLike) -> Path:
    """Write ``sol`` (standard form, no free scalars) in SDPA's output layout."""
    lines = [
        f"phase.value  = {_STATUS_TO_PHASE[sol.status]}",
        f"   Iteration = {sol.iterations}",
        f"relative gap = {sol.gap:+.16e}",
        f"objValPrimal = {-sol.dual_objective:+.16e}",
        f"objValDual   = {-sol.primal_objective:+.16e}",
        f"p.feas.error = {sol.dual_infeasibility:+.16e}",
        f"d.feas.error = {sol.primal_infeasibility:+.16e}",
        "xVec = ",
        "{" + ",".join(f"{-v:+.16e}" for v in sol.y) + "}",
        "xMat = ",
        "{",
        *(_fmt_block(s, z) for s, z in zip(block_sizes, sol.z)),
        "}",
        "yMat = ",
        "{",
        *(_fmt_block(s, x) for s, x in zip(block_sizes, sol.x)),
        "}",
    ]
    path = Path(path)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


_TOKEN = re.compile(r"\s*(?:(\{)|(\})|(,)|([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?))")


class _Braces:
    """Tiny recursive-descent reader for the nested ``{...}`` value lists."""

    def __init__(self, text: str, first_line: int):
        self.text = text
        self.pos = 0
        self.first_line = first_line

    def line(self) -> int:
        return self.first_line + self.text.count("\n", 0, self.pos)

    def _next(self):
        mt = _TOKEN.match(self.text, self.pos)
        if not mt or mt.end() == self.pos:
            raise SdpaParseError("unexpected character in value list", self.line())
        self.pos = mt.end()
        return mt

    def _peek(self):
        return _TOKEN.match(self.text, self.pos)

    def value(self):
        mt = self._next()
        if mt.group(4):
            return float(mt.group(4))
        if not mt.group(1):
            raise SdpaParseError("expected '{' or a number", self.line())
        items = []
        while True:
            pk = self._peek()
            if pk is None:
                raise SdpaParseError("unterminated '{'", self.line())
            if pk.group(2):
                self._next()
                return items
            if pk.group(3):
                self._next()
                continue
            items.append(self.value())


def _to_block(v, line):
    if all(isinstance(t, float) for t in v):
        return np.array(v, dtype=float), -len(v)
    if not all(isinstance(r, list) and all(isinstance(t, float) for t in r) for r in v):
        raise SdpaParseError("malformed matrix block", line)
    mat = np.array(v, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise SdpaParseError("matrix block is not square", line)
    return mat, mat.shape[0]


def import_solution(path: str | os.PathLike) -> SdpSolution:
    text = Path(path).read_text()
    lines = text.splitlines()
    scalars: dict[str, str] = {}
    lists: dict[str, object] = {}
    i = 0
    while i < len(lines):
        line = lines[i]
        mt = re.match(r"\s*([A-Za-z.]+)\s*=\s*(.*)$", line)
        if mt and mt.group(1) in ("xVec", "xMat", "yMat"):
            rest = mt.group(2) + "\n" + "\n".join(lines[i + 1:])
            reader = _Braces(rest, i + 1)
            lists[mt.group(1)] = reader.value()
            consumed = rest[: reader.pos].count("\n")
            i += consumed + 1
            continue
        if mt:
            scalars[mt.group(1)] = mt.group(2).strip()
        i += 1
    for key in ("phase.value", "objValPrimal", "objValDual"):
        if key not in scalars:
            raise SdpaParseError(f"missing '{key}'", len(lines))
    for key in ("xVec", "xMat", "yMat"):
        if key not in lists:
            raise SdpaParseError(f"missing '{key}'", len(lines))

    def num(key, default=np.nan):
        if key not in scalars:
            return default
        try:
            return float(scalars[key].split()[0])
        except (ValueError, IndexError):
            ln = next(n for n, l in enumerate(lines, 1) if l.strip().startswith(key))
            raise SdpaParseError(f"bad number for '{key}'", ln) from None

    xvec = lists["xVec"]
    if not all(isinstance(t, float) for t in xvec):
        raise SdpaParseError("xVec must be a flat list", len(lines))
    zb = [_to_block(v, len(lines))[0] for v in lists["xMat"]]
    xb = [_to_block(v, len(lines))[0] for v in lists["yMat"]]
    phase = scalars["phase.value"]
    p_obj = -num("objValDual")
    d_obj = -num("objValPrimal")
    return SdpSolution(
        status=_PHASE_TO_STATUS.get(phase, SdpStatus.NUMERICAL_FAILURE),
        x=xb,
        y=-np.array(xvec, dtype=float),
        z=zb,
        free=np.zeros(0),
        primal_objective=p_obj,
        dual_objective=d_obj,
        iterations=int(num("Iteration", 0)),
        gap=num("relative gap"),
        primal_infeasibility=num("d.feas.error"),
        dual_infeasibility=num("p.feas.error"),
        message=f"imported (phase {phase})",
    )
