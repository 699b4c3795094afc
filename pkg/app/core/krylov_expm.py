"""
Krylov approximation of exp(tau A) v and small dense matrix exponentials.

    exp(tau A) v ~ gamma V_M expm(tau H_M) e_1,   gamma = ||v||_2

V_M, H_M come from the Arnoldi process (modified Gram-Schmidt, two passes).
The dense exponential uses diagonal Pade approximants with scaling and squaring.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from app.core.errors import ConfigurationError, ConvergenceError

logger = logging.getLogger(__name__)

DEFAULT_KRYLOV_DIM = 25
BREAKDOWN_TOL = 1e-14
MAX_DENSE_DIM = 1024

MatVec = Union[Callable[[np.ndarray], np.ndarray], np.ndarray, sp.spmatrix, LinearOperator]

# Pade degrees and the 1-norm bounds up to which each is accurate to unit roundoff
PADE_DEGREES = (3, 5, 7, 9, 13)
PADE_THETA = (0.01495585217958292, 0.2539398330063230, 0.9504178996162932,
              2.097847961257068, 5.371920351148152)
PADE_COEFFS = {
    3: (120, 60, 12, 1),
    5: (30240, 15120, 3360, 420, 30, 1),
    7: (17297280, 8648640, 1995840, 277200, 25200, 1512, 56, 1),
    9: (17643225600, 8821612800, 2075673600, 302702400, 30270240,
        2162160, 110880, 3960, 90, 1),
    13: (64764752532480000, 32382376266240000, 7771770303897600,
         1187353796428800, 129060195264000, 10559470521600,
         670442572800, 33522128640, 1323241920,
         40840800, 960960, 16380, 182, 1),
}


def as_matvec(A: MatVec) -> Callable[[np.ndarray], np.ndarray]:
    if callable(A) and not isinstance(A, (np.ndarray, LinearOperator)) and not sp.issparse(A):
        return A
    if isinstance(A, LinearOperator):
        return A.matvec
    return lambda x: A @ x


@dataclass
class ArnoldiFactorization:
    """
    A V = V H + h_next v_next e_m^T with m = m_eff.

    H_ext is the (m_eff + 1) x m_eff extended Hessenberg matrix; its last row
    holds h_next (zero after a happy breakdown).
    """
    V: np.ndarray
    H_ext: np.ndarray
    gamma: float
    m_eff: int
    breakdown: bool

    @property
    def H(self) -> np.ndarray:
        return self.H_ext[:self.m_eff, :self.m_eff]

    @property
    def h_next(self) -> float:
        return float(self.H_ext[self.m_eff, self.m_eff - 1])


def arnoldi(matvec: MatVec, v: np.ndarray, M: int) -> ArnoldiFactorization:
    """Orthonormal basis of span{v, Av, ..., A^(M-1) v} and the projected Hessenberg matrix."""
    apply = as_matvec(matvec)
    v = np.asarray(v, dtype=float).reshape(-1)
    n = v.shape[0]
    if M < 1:
        raise ConfigurationError(f"Krylov dimension must be >= 1, got {M}")
    gamma = float(np.linalg.norm(v))
    if gamma == 0.0 or not np.isfinite(gamma):
        raise ConfigurationError(f"Arnoldi needs a nonzero finite seed vector (norm {gamma})")
    M = min(M, n)

    V = np.zeros((n, M + 1))
    H = np.zeros((M + 1, M))
    V[:, 0] = v / gamma
    m_eff = M
    breakdown = False
    for j in range(M):
        w = np.asarray(apply(V[:, j]), dtype=float).reshape(-1)
        scale = np.linalg.norm(w)
        for _ in range(2):
            for i in range(j + 1):
                coeff = V[:, i] @ w
                H[i, j] += coeff
                w -= coeff * V[:, i]
        beta = np.linalg.norm(w)
        H[j + 1, j] = beta
        if beta <= BREAKDOWN_TOL * scale:
            H[j + 1, j] = 0.0
            m_eff = j + 1
            breakdown = True
            break
        V[:, j + 1] = w / beta

    if breakdown:
        logger.debug(f"Arnoldi happy breakdown at m_eff={m_eff} (n={n})")
    return ArnoldiFactorization(
        V=V[:, :m_eff], H_ext=H[:m_eff + 1, :m_eff], gamma=gamma, m_eff=m_eff, breakdown=breakdown,
    )


def _pade(A: np.ndarray, m: int) -> np.ndarray:
    c = PADE_COEFFS[m]
    ident = np.eye(A.shape[0])
    A2 = A @ A
    if m == 13:
        A4 = A2 @ A2
        A6 = A2 @ A4
        U = A @ (A6 @ (c[13] * A6 + c[11] * A4 + c[9] * A2)
                 + c[7] * A6 + c[5] * A4 + c[3] * A2 + c[1] * ident)
        V = A6 @ (c[12] * A6 + c[10] * A4 + c[8] * A2) + c[6] * A6 + c[4] * A4 + c[2] * A2 + c[0] * ident
    else:
        powers = [ident, A2]
        for _ in range(2, (m + 1) // 2):
            powers.append(powers[-1] @ A2)
        U = A @ sum(c[jj] * powers[jj // 2] for jj in range(m, 0, -2))
        V = sum(c[jj] * powers[(jj + 1) // 2] for jj in range(m - 1, -1, -2))
    return scipy.linalg.solve(V - U, V + U)


def expm_dense(H: np.ndarray) -> np.ndarray:
    """exp(H) by the [m/m] Pade approximant, m in (3, 5, 7, 9, 13), with scaling and squaring."""
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ConfigurationError(f"expm_dense needs a square matrix, got shape {H.shape}")
    if H.shape[0] > MAX_DENSE_DIM:
        raise ConfigurationError(f"expm_dense is meant for small matrices (dimension {H.shape[0]} > {MAX_DENSE_DIM})")
    if H.shape[0] == 0:
        return np.zeros((0, 0))
    if not np.all(np.isfinite(H)):
        raise ConfigurationError("expm_dense input contains NaN or Inf")

    norm = np.linalg.norm(H, 1)
    for m, theta in zip(PADE_DEGREES, PADE_THETA):
        if norm <= theta:
            return _pade(H, m)
    mantissa, s = np.frexp(norm / PADE_THETA[-1])
    s = int(s - (mantissa == 0.5))
    F = _pade(H / 2.0 ** s, 13)
    for _ in range(s):
        F = F @ F
    return F


def expm_multiply(matvec: MatVec, v: np.ndarray, tau: float, M: int = DEFAULT_KRYLOV_DIM,
                  full_output: bool = False):
    """
    Krylov approximation of exp(tau A) v.

    With full_output the effective subspace dimension is returned as well:
    (w, m_eff); m_eff = 0 when no Arnoldi run was needed.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    if not np.isfinite(tau):
        raise ConfigurationError(f"time step must be finite, got {tau}")
    if tau == 0.0 or not np.any(v):
        result = v.copy()
        return (result, 0) if full_output else result

    fac = arnoldi(matvec, v, M)
    small = expm_dense(tau * fac.H)
    result = fac.gamma * (fac.V @ small[:, 0])
    return (result, fac.m_eff) if full_output else result


def gmres(matvec: MatVec, b: np.ndarray, x0: Optional[np.ndarray] = None, tol: float = 1e-12,
          restart: int = 50, max_iter: int = 200) -> Tuple[np.ndarray, List[float]]:
    """
    Restarted GMRES built on the Arnoldi process above.

    Stops once ||b - A x|| <= tol * ||b||. max_iter bounds the total number of
    matrix-vector products; the residual history (one entry per restart cycle)
    is returned with the solution.
    """
    apply = as_matvec(matvec)
    b = np.asarray(b, dtype=float).reshape(-1)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float).reshape(-1)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros_like(b), [0.0]
    target = tol * b_norm

    r = b - apply(x)
    history = [float(np.linalg.norm(r))]
    used = 0
    while history[-1] > target:
        if used >= max_iter:
            raise ConvergenceError(
                f"GMRES did not reach {tol:.1e} relative residual in {max_iter} iterations "
                f"(residual {history[-1] / b_norm:.3e})", residuals=history,
            )
        fac = arnoldi(apply, r, min(restart, max_iter - used))
        used += fac.m_eff
        rhs = np.zeros(fac.m_eff + 1)
        rhs[0] = fac.gamma
        y = np.linalg.lstsq(fac.H_ext, rhs, rcond=None)[0]
        x = x + fac.V @ y
        r = b - apply(x)
        history.append(float(np.linalg.norm(r)))
        if history[-1] > target and history[-1] >= history[-2] * (1.0 - 1e-12):
            raise ConvergenceError(f"GMRES stagnated at residual {history[-1]:.3e}", residuals=history)
    return x, history
