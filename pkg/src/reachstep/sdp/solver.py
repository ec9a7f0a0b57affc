"""Dense primal-dual interior-point method on the homogeneous self-dual embedding.

The pair

    (P)  min <C, X>  s.t. A(X) = b, X >= 0
    (D)  max b'y     s.t. A*(y) + Z = C, Z >= 0

is embedded with two extra scalars tau, kappa >= 0:

    A(X) = b tau,   A*(y) + Z = C tau,   b'y - <C, X> = kappa.

The embedding always has a strictly feasible start.  (X, y, Z) / tau solves
the original pair when tau stays away from zero; a vanishing tau exposes an
infeasibility ray.  Each iteration is a Mehrotra predictor-corrector step
with a symmetrised Newton direction, Nesterov-Todd by default or HKM.
LP blocks are handled elementwise and free scalars are split into
nonnegative pairs beforehand.
"""
from __future__ import annotations

import logging

import numpy as np
from scipy import linalg as sla

from .problem import DegenerateProblemError, SdpOptions, SdpProblem, SdpSolution, SdpStatus

__all__ = ["solve"]

log = logging.getLogger(__name__)


def _sym(m):
    return 0.5 * (m + m.T)


class _Blocks:
    """Cone algebra over a list of PSD matrices and LP vectors."""

    def __init__(self, sizes):
        self.sizes = sizes
        self.psd = [s > 0 for s in sizes]
        self.dim = sum(abs(s) for s in sizes)

    def identity(self, scale):
        return [scale * (np.eye(s) if s > 0 else np.ones(-s)) for s in self.sizes]

    @staticmethod
    def inner(u, v):
        return sum(float(np.sum(a * b)) for a, b in zip(u, v))

    def step(self, x, dx, alpha):
        return [_sym(xk + alpha * dk) if p else xk + alpha * dk for p, xk, dk in zip(self.psd, x, dx)]

    def interior(self, x) -> bool:
        for p, xk in zip(self.psd, x):
            if p:
                try:
                    np.linalg.cholesky(xk)
                except np.linalg.LinAlgError:
                    return False
            elif np.any(xk <= 0):
                return False
        return True

    def max_step(self, x, dx):
        """Largest alpha with x + alpha*dx in the cone (inf if unbounded)."""
        alpha = np.inf
        for p, xk, dk in zip(self.psd, x, dx):
            if p:
                L = np.linalg.cholesky(xk)
                w = sla.solve_triangular(L, sla.solve_triangular(L, dk, lower=True).T, lower=True)
                lam = np.linalg.eigvalsh(_sym(w))[0]
                if lam < 0:
                    alpha = min(alpha, -1.0 / lam)
            else:
                neg = dk < 0
                if np.any(neg):
                    alpha = min(alpha, float(np.min(-xk[neg] / dk[neg])))
        return alpha


class _NT:
    """Nesterov-Todd scaling W = G G' of a PSD block, G' Z G = G^-1 X G^-T = diag(v)."""

    def __init__(self, x, z):
        L = np.linalg.cholesky(x)
        lam, U = np.linalg.eigh(_sym(L.T @ z @ L))
        if lam[0] <= 0:
            raise np.linalg.LinAlgError("dual block is not positive definite")
        q = lam ** -0.25
        self.G = (L @ U) * q
        self.Gi = (U.T / q[:, None]) @ sla.solve_triangular(L, np.eye(len(lam)), lower=True)
        self.W = _sym(self.G @ self.G.T)
        self.v = np.sqrt(lam)

    def apply(self, m):
        return _sym(self.W @ m @ self.W)

    def schur(self, ak):
        return np.einsum("ab,jbc,cd->jad", self.W, ak, self.W, optimize=True)

    def centre(self, sigma_mu, corr):
        rhs = np.diag(sigma_mu - self.v ** 2)
        if corr is not None:
            dx = self.Gi @ corr[0] @ self.Gi.T
            dz = self.G.T @ corr[1] @ self.G
            rhs = rhs - _sym(dx @ dz)
        r = 2.0 * rhs / (self.v[:, None] + self.v[None, :])
        return _sym(self.G @ r @ self.G.T)


class _HKM:
    """HKM scaling of a PSD block: W(M) = sym(X M Z^-1)."""

    def __init__(self, x, z):
        self.zi = _sym(sla.cho_solve(sla.cho_factor(z, lower=True), np.eye(z.shape[0])))
        self.x = x

    def apply(self, m):
        return _sym(self.x @ m @ self.zi)

    def schur(self, ak):
        return np.einsum("ab,jbc,cd->jad", self.x, ak, self.zi, optimize=True)

    def centre(self, sigma_mu, corr):
        t = sigma_mu * self.zi - self.x
        if corr is not None:
            t = t - _sym(corr[0] @ corr[1] @ self.zi)
        return t


class _LP:
    def __init__(self, x, z):
        self.x, self.z = x, z
        self.w = x / z

    def apply(self, m):
        return self.w * m

    def centre(self, sigma_mu, corr):
        t = sigma_mu / self.z - self.x
        if corr is not None:
            t = t - corr[0] * corr[1] / self.z
        return t


_PSD_SCALINGS = {"nt": _NT, "hkm": _HKM}


def _setup(problem: SdpProblem):
    if problem.is_empty():
        raise DegenerateProblemError("problem has no constraints or no variables")
    std = problem.standard_form()
    m = std.m
    # equilibrate rows; y is mapped back to the caller's scaling at the end
    rn = np.sqrt(sum(np.sum(ak.reshape(m, -1) ** 2, axis=1) for ak in std.a))
    rs = np.where(rn > 0, 1.0 / np.where(rn > 0, rn, 1.0), 1.0)
    A = [ak * rs.reshape((m,) + (1,) * (ak.ndim - 1)) for ak in std.a]
    return std, A, std.b * rs, std.c, rs


class _Schur:
    """Cholesky solve of M_ij = <A_i, W(A_j)> with two steps of iterative refinement."""

    def __init__(self, scalings, A, A2, m):
        M = np.zeros((m, m))
        for sc, ak, a2 in zip(scalings, A, A2):
            if isinstance(sc, _LP):
                M += (a2 * sc.w) @ a2.T
            else:
                M += a2 @ sc.schur(ak).reshape(m, -1).T
        self.M = _sym(M)
        try:
            self.f = sla.cho_factor(self.M, lower=True)
        except np.linalg.LinAlgError:
            reg = 1e-10 * max(1.0, float(np.max(np.abs(np.diag(self.M)))))
            self.f = sla.cho_factor(self.M + reg * np.eye(m), lower=True)

    def solve(self, r):
        x = sla.cho_solve(self.f, r)
        for _ in range(2):
            x = x + sla.cho_solve(self.f, r - self.M @ x)
        return x


def solve(problem: SdpProblem, options: SdpOptions | None = None) -> SdpSolution:
    opts = options or SdpOptions()
    try:
        psd_scaling = _PSD_SCALINGS[opts.direction]
    except KeyError:
        raise ValueError(f"unknown search direction {opts.direction!r}") from None
    std, A, b, C, rs = _setup(problem)
    cone = _Blocks(std.block_sizes)
    m = std.m
    A2 = [ak.reshape(m, -1) for ak in A]

    def a_op(x):
        return sum((a2 @ xk.reshape(-1) for a2, xk in zip(A2, x)), np.zeros(m))

    def at_op(y):
        return [np.tensordot(y, ak, axes=(0, 0)) for ak in A]

    # A A* is well conditioned after equilibration; projecting with it removes
    # the rounding drift primal directions pick up through the scaling
    try:
        AAt_f = sla.cho_factor(sum(a2 @ a2.T for a2 in A2) + 1e-14 * np.eye(m), lower=True)
    except np.linalg.LinAlgError:
        AAt_f = None

    bnorm = float(np.max(np.abs(b))) if b.size else 0.0
    cnorm = max((float(np.max(np.abs(ck))) for ck in C), default=0.0)
    X = cone.identity(1.0 + bnorm)
    Z = cone.identity(1.0 + cnorm)
    y = np.zeros(m)
    tau = kappa = 1.0
    nu = cone.dim + 1

    status = SdpStatus.ITERATION_LIMIT
    message = "iteration limit reached"
    it = 0
    stalls = 0
    gap = pinf = dinf = np.inf
    pobj = dobj = np.nan

    for it in range(opts.max_iter + 1):
        ax = a_op(X)
        aty = at_op(y)
        rp = b * tau - ax
        Rd = [ck * tau - ak - zk for ck, ak, zk in zip(C, aty, Z)]
        cx = cone.inner(C, X)
        by = float(b @ y)
        rg = by - cx - kappa
        xz = cone.inner(X, Z)
        mu = (xz + tau * kappa) / nu

        pobj, dobj = cx / tau, by / tau
        pinf = float(np.max(np.abs(b - ax / tau))) / (1.0 + bnorm) if m else 0.0
        dinf = max(float(np.max(np.abs(ck - (ak + zk) / tau))) for ck, ak, zk in zip(C, aty, Z)) / (1.0 + cnorm)
        gap = max(xz / tau ** 2, abs(pobj - dobj)) / (1.0 + abs(pobj) + abs(dobj))
        log.debug("it %3d pobj %+.10e dobj %+.10e gap %.2e pinf %.2e dinf %.2e tau %.2e kappa %.2e",
                  it, pobj, dobj, gap, pinf, dinf, tau, kappa)
        if gap <= opts.gap_tol and pinf <= opts.feas_tol and dinf <= opts.feas_tol:
            status, message = SdpStatus.OPTIMAL, "converged"
            break
        # rays: (y, Z) with A*(y) + Z ~ 0, b'y > 0  /  X with A(X) ~ 0, <C, X> < 0
        if by > 0:
            ray = max(float(np.max(np.abs(ak + zk))) for ak, zk in zip(aty, Z))
            if ray / by < opts.infeas_tol:
                status, message = SdpStatus.INFEASIBLE, "primal infeasible (dual ray found)"
                break
        if cx < 0:
            ray = float(np.max(np.abs(ax))) if m else 0.0
            if ray / -cx < opts.infeas_tol:
                status, message = SdpStatus.DUAL_INFEASIBLE, "dual infeasible (primal ray found)"
                break
        if it == opts.max_iter:
            break

        try:
            sc = [psd_scaling(xk, zk) if p else _LP(xk, zk) for p, xk, zk in zip(cone.psd, X, Z)]
            Mf = _Schur(sc, A, A2, m)
        except np.linalg.LinAlgError:
            status, message = SdpStatus.NUMERICAL_FAILURE, "scaling or Schur complement is singular"
            break
        WC = [s.apply(ck) for s, ck in zip(sc, C)]
        u = a_op(WC)
        w = cone.inner(C, WC)
        Mi_ub = Mf.solve(u + b)
        denom = float((u - b) @ Mi_ub) - w - kappa / tau

        def direction(sigma_mu, eta, corr):
            # dX + W(dZ) = centring term, dZ = eta Rd - A*(dy) + C dtau
            G = [s.centre(sigma_mu, None if corr is None else (corr[0][k], corr[1][k])) - eta * s.apply(rdk)
                 for k, (s, rdk) in enumerate(zip(sc, Rd))]
            kap_rhs = sigma_mu - tau * kappa - (corr[2] * corr[3] if corr is not None else 0.0)
            r1 = eta * rp - a_op(G)
            r2 = eta * rg - cone.inner(C, G) - kap_rhs / tau
            Mi_r1 = Mf.solve(r1)
            dtau = (r2 - float((u - b) @ Mi_r1)) / denom
            dy = Mi_r1 + dtau * Mi_ub
            atdy = at_op(dy)
            dX = [gk + s.apply(ad) - dtau * wc for s, gk, ad, wc in zip(sc, G, atdy, WC)]
            if AAt_f is not None:
                err = eta * rp + b * dtau - a_op(dX)
                dX = [dk + fk for dk, fk in zip(dX, at_op(sla.cho_solve(AAt_f, err)))]
            dZ = [eta * rdk - ad + dtau * ck for rdk, ad, ck in zip(Rd, atdy, C)]
            dkappa = (kap_rhs - kappa * dtau) / tau
            return dX, dy, dZ, dtau, dkappa

        def max_alpha(dX, dZ, dtau, dkappa):
            a = min(cone.max_step(X, dX), cone.max_step(Z, dZ))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        try:
            dXa, dya, dZa, dta, dka = direction(0.0, 1.0, None)
            aa = min(1.0, max_alpha(dXa, dZa, dta, dka))
            mu_aff = (cone.inner(cone.step(X, dXa, aa), cone.step(Z, dZa, aa))
                      + (tau + aa * dta) * (kappa + aa * dka)) / nu
            sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3
            dX, dy, dZ, dtau, dkappa = direction(sigma * mu, 1.0 - sigma, (dXa, dZa, dta, dka))
            alpha = min(1.0, opts.step_fraction * max_alpha(dX, dZ, dtau, dkappa))
        except np.linalg.LinAlgError:
            status, message = SdpStatus.NUMERICAL_FAILURE, "iterate lost definiteness"
            break

        # the eigenvalue step bound can be optimistic on ill-conditioned
        # iterates; back off until both factorise
        for _ in range(40):
            Xn, Zn = cone.step(X, dX, alpha), cone.step(Z, dZ, alpha)
            if cone.interior(Xn) and cone.interior(Zn):
                break
            alpha *= 0.7
        else:
            status, message = SdpStatus.NUMERICAL_FAILURE, "could not keep iterates interior"
            break
        if alpha < 1e-10:
            stalls += 1
            if stalls >= 3:
                status, message = SdpStatus.NUMERICAL_FAILURE, "step lengths stalled"
                break
        else:
            stalls = 0
        X, Z = Xn, Zn
        y = y + alpha * dy
        tau += alpha * dtau
        kappa += alpha * dkappa

    # rays are reported unnormalised, solutions divided by tau
    scale = 1.0 if status in (SdpStatus.INFEASIBLE, SdpStatus.DUAL_INFEASIBLE) else tau
    X = [x / scale for x in X]
    Z = [z / scale for z in Z]
    y = y / scale
    nb = len(problem.block_sizes)
    k = problem.n_free
    free = X[nb][:k] - X[nb][k:] if k else np.zeros(0)
    return SdpSolution(
        status=status,
        x=X[:nb],
        y=y * rs,
        z=Z[:nb],
        free=free,
        primal_objective=pobj,
        dual_objective=dobj,
        iterations=it,
        gap=gap,
        primal_infeasibility=pinf,
        dual_infeasibility=dinf,
        message=message,
    )
