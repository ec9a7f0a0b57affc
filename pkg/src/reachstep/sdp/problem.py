"""Block-structured linear SDP in primal standard form.

    minimize    sum_k <C_k, X_k> + c_free . s
    subject to  sum_k <A_ik, X_k> + a_free[i] . s = b_i,   X_k in cone_k

Blocks with positive size are symmetric PSD matrices; negative size ``-n``
denotes an n-vector constrained elementwise nonnegative (an LP block, as in
SDPA's diagonal blocks).  ``s`` are free scalars.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = ["SdpProblem", "SdpSolution", "SdpStatus", "SdpOptions", "DegenerateProblemError"]


class DegenerateProblemError(ValueError):
    pass


class SdpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    NUMERICAL_FAILURE = "NumericalFailure"
    ITERATION_LIMIT = "IterationLimit"


@dataclass(frozen=True)
class SdpOptions:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iter: int = 200
    step_fraction: float = 0.98
    infeas_tol: float = 1e-8
    direction: str = "nt"


@dataclass
class SdpProblem:
    block_sizes: tuple[int, ...]
    c: list[np.ndarray]
    a: list[np.ndarray]
    b: np.ndarray
    c_free: np.ndarray = field(default_factory=lambda: np.zeros(0))
    a_free: np.ndarray | None = None

    def __post_init__(self):
        self.block_sizes = tuple(int(s) for s in self.block_sizes)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        m = self.b.size
        self.c_free = np.asarray(self.c_free, dtype=float).reshape(-1)
        if self.a_free is None:
            self.a_free = np.zeros((m, self.c_free.size))
        self.a_free = np.asarray(self.a_free, dtype=float).reshape(m, self.c_free.size)
        if len(self.c) != len(self.block_sizes) or len(self.a) != len(self.block_sizes):
            raise ValueError("c and a need one entry per block")
        self.c = [np.asarray(x, dtype=float) for x in self.c]
        self.a = [np.asarray(x, dtype=float) for x in self.a]
        for s, ck, ak in zip(self.block_sizes, self.c, self.a):
            if s == 0:
                raise ValueError("block sizes must be nonzero")
            n = abs(s)
            want_c = (n, n) if s > 0 else (n,)
            if ck.shape != want_c or ak.shape != (m, *want_c):
                raise ValueError(f"block of size {s}: c {ck.shape}, a {ak.shape} inconsistent with m={m}")
            if s > 0:
                if not np.allclose(ck, ck.T, atol=0, rtol=0) or not np.array_equal(ak, np.swapaxes(ak, 1, 2)):
                    raise ValueError("PSD block data must be symmetric")
        if not np.all(np.isfinite(self.b)):
            raise ValueError("b must be finite")

    @property
    def m(self) -> int:
        return self.b.size

    @property
    def n_free(self) -> int:
        return self.c_free.size

    def is_empty(self) -> bool:
        return self.m == 0 or (not self.block_sizes and self.n_free == 0)

    def standard_form(self) -> "SdpProblem":
        """Same problem with each free scalar split as s = p - q, p, q >= 0.

        The pairs occupy one extra LP block ``[p_1..p_k, q_1..q_k]``.
        """
        if self.n_free == 0:
            return self
        k = self.n_free
        return SdpProblem(
            self.block_sizes + (-2 * k,),
            self.c + [np.concatenate([self.c_free, -self.c_free])],
            self.a + [np.concatenate([self.a_free, -self.a_free], axis=1)],
            self.b,
        )

    def residual(self, x_blocks: list[np.ndarray], s: np.ndarray | None = None) -> np.ndarray:
        r = self.b.copy()
        for sz, ak, xk in zip(self.block_sizes, self.a, x_blocks):
            r -= ak.reshape(self.m, -1) @ np.asarray(xk).reshape(-1)
        if self.n_free:
            r -= self.a_free @ s
        return r

    def objective(self, x_blocks: list[np.ndarray], s: np.ndarray | None = None) -> float:
        v = sum(float(np.sum(ck * xk)) for ck, xk in zip(self.c, x_blocks))
        if self.n_free:
            v += float(self.c_free @ s)
        return v


@dataclass
class SdpSolution:
    status: SdpStatus
    x: list[np.ndarray]
    y: np.ndarray
    z: list[np.ndarray]
    free: np.ndarray
    primal_objective: float
    dual_objective: float
    iterations: int
    gap: float
    primal_infeasibility: float
    dual_infeasibility: float
    message: str = ""

    @property
    def objective(self) -> float:
        return self.primal_objective
