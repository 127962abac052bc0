"""Small log-barrier solver for block-diagonal linear matrix inequalities.

    minimize  c . z   subject to   F0_b + sum_k z_k F_{k,b}  > 0   for every block b

with Hermitian blocks.  Used for the spectral-norm best approximation and
for maximizing a state difference over a Lip ball.  Dense numpy linear
algebra (Cholesky, inverses) is fine here: only the final objective values
are re-evaluated with the Jacobi norm in the callers.

The blocks are assembled into one block-diagonal matrix.  At the sizes used
here (total size <= ~40) a single dense factorization is much cheaper than
many tiny ones because the cost is dominated by per-call overhead.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InfeasibleStart(ValueError):
    pass


class LMIProblem:
    def __init__(self, c, F0: list, Fk: list):
        self.c = np.asarray(c, dtype=float)
        K = len(self.c)
        sizes = [f.shape[0] for f in F0]
        n = sum(sizes)
        self.sizes = sizes
        self.offsets = np.cumsum([0] + sizes)[:-1].tolist()
        self.n = n
        self.F0 = np.zeros((n, n), dtype=np.complex128)
        self.Fk = np.zeros((K, n, n), dtype=np.complex128)
        for off, d, f0, fk in zip(self.offsets, sizes, F0, Fk):
            self.F0[off:off + d, off:off + d] = f0
            self.Fk[:, off:off + d, off:off + d] = fk
        self._Fflat = self.Fk.reshape(K, n * n)

    @property
    def K(self) -> int:
        return len(self.c)

    @property
    def nu(self) -> int:
        """Barrier parameter: total number of rows."""
        return self.n

    def matrix(self, z) -> np.ndarray:
        return self.F0 + (np.asarray(z, dtype=float) @ self._Fflat).reshape(self.n, self.n)

    def block(self, M: np.ndarray, b: int) -> np.ndarray:
        off, d = self.offsets[b], self.sizes[b]
        return M[off:off + d, off:off + d]


@dataclass
class LMIResult:
    z: np.ndarray
    s: float
    gap: float                    # nu / s, the central-path duality gap
    newton_steps: int
    converged: bool
    dual: np.ndarray              # F(z)^{-1} / s, block diagonal

    def dual_block(self, prob: LMIProblem, b: int) -> np.ndarray:
        return prob.block(self.dual, b)


def _chol(F):
    try:
        return np.linalg.cholesky(F)
    except np.linalg.LinAlgError:
        return None


def _barrier(L) -> float:
    return -2.0 * float(np.sum(np.log(np.real(np.diagonal(L)))))


def _derivatives(prob: LMIProblem, L):
    K, n = prob.K, prob.n
    Li = np.linalg.inv(L)
    M = Li @ prob.Fk @ Li.conj().T          # (K, n, n)
    g = -np.real(np.trace(M, axis1=1, axis2=2))
    Mf = M.reshape(K, n * n)
    H = np.real(Mf @ Mf.conj().T)
    return g, H, Li


def solve_lmi(prob: LMIProblem, z0, *, gap_tol: float = 1e-10, mu: float = 20.0, s0: float | None = None,
              max_newton: int = 400, center_tol: float = 1e-8, final_tol: float = 1e-14) -> LMIResult:
    """Barrier path-following from a strictly feasible z0.

    Stops when nu/s <= gap_tol.  Each centering uses damped Newton with a
    feasibility-preserving backtracking line search; the last centering is
    run to ``final_tol`` so the dual matrix is accurate.
    """
    z = np.array(z0, dtype=float)
    c = prob.c
    L = _chol(prob.matrix(z))
    if L is None:
        raise InfeasibleStart("starting point is not strictly feasible")
    nu = prob.nu
    g, H, Li = _derivatives(prob, L)
    if s0 is None:
        cn = float(np.linalg.norm(c))
        s0 = max(float(np.linalg.norm(g)) / cn, 1.0) if cn > 0 else 1.0
    s = s0
    steps = 0
    converged = False
    while True:
        last = nu / s <= gap_tol
        tol = final_tol if last else center_tol
        for _ in range(80):
            grad = s * c + g
            try:
                dz = -np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                dz = -np.linalg.lstsq(H, grad, rcond=None)[0]
            dec2 = float(-grad @ dz)
            if dec2 / 2 <= tol:
                break
            f_old = s * float(c @ z) + _barrier(L)
            step = 1.0 / (1.0 + np.sqrt(max(dec2, 0.0))) if dec2 > 0.25 else 1.0
            Ln = None
            while step >= 1e-14:
                zn = z + step * dz
                Ln = _chol(prob.matrix(zn))
                if Ln is not None:
                    f_new = s * float(c @ zn) + _barrier(Ln)
                    # near the center the decrease is below rounding; accept full steps there
                    if f_new <= f_old - 0.25 * step * dec2 or dec2 < 1e-10:
                        break
                step *= 0.5
                Ln = None
            if Ln is None:
                break
            z, L = zn, Ln
            g, H, Li = _derivatives(prob, L)
            steps += 1
            if steps >= max_newton:
                break
        if last:
            converged = True
            break
        if steps >= max_newton:
            break
        s = min(s * mu, nu / gap_tol) if nu / (s * mu) < gap_tol else s * mu
    dual = (Li.conj().T @ Li) / s
    return LMIResult(z, s, nu / s, steps, converged, dual)
