"""Small dense linear algebra for gain certificates.

Symmetric eigenvalues use cyclic Jacobi rotations; the Lyapunov equation is
vectorized over the upper triangle of P.  Sizes are capped at 8.
"""

from __future__ import annotations

import itertools

import numpy as np

MAX_DIM = 8


class LinalgError(ArithmeticError):
    pass


def _square(M, name="matrix") -> np.ndarray:
    A = np.array(M, dtype=float, ndmin=2)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    if A.shape[0] > MAX_DIM:
        raise ValueError(f"{name} dimension {A.shape[0]} exceeds {MAX_DIM}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def as_symmetric(M, tol: float = 1e-12) -> np.ndarray:
    """Validate symmetry (max asymmetry relative to scale) and symmetrize."""
    A = _square(M)
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(A - A.T)) > tol * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (A + A.T)


def sym_eigs(M, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi)."""
    A = as_symmetric(M).copy()
    n = A.shape[0]
    scale = max(1.0, float(np.linalg.norm(A)))
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(A, 1) ** 2))
        if off <= tol * scale:
            return np.sort(np.diag(A))
        for p, q in itertools.combinations(range(n), 2):
            apq = A[p, q]
            if apq == 0.0:
                continue
            tau = (A[q, q] - A[p, p]) / (2.0 * apq)
            t = np.copysign(1.0, tau) / (abs(tau) + np.hypot(1.0, tau))
            c = 1.0 / np.hypot(1.0, t)
            s = t * c
            J = np.eye(n)
            J[p, p] = J[q, q] = c
            J[p, q] = s
            J[q, p] = -s
            A = J.T @ A @ J
            A[p, q] = A[q, p] = 0.0
    raise LinalgError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


def lyapunov_solve(F, residual_tol: float = 1e-10) -> np.ndarray:
    """Symmetric P with P F + F' P = -I.

    The n(n+1)/2 unknowns P[i,j], i <= j, satisfy one equation per upper
    triangle entry of the (symmetric) left-hand side.
    """
    F = _square(F, "F")
    n = F.shape[0]
    idx = [(i, j) for i in range(n) for j in range(i, n)]
    col = {ij: k for k, ij in enumerate(idx)}

    def unk(i, j):
        return col[(i, j) if i <= j else (j, i)]

    N = len(idx)
    L = np.zeros((N, N))
    rhs = np.zeros(N)
    # (PF + F'P)[i,j] = sum_k P[i,k] F[k,j] + F[k,i] P[k,j]
    for r, (i, j) in enumerate(idx):
        for k in range(n):
            L[r, unk(i, k)] += F[k, j]
            L[r, unk(k, j)] += F[k, i]
        rhs[r] = -1.0 if i == j else 0.0
    cond = np.linalg.cond(L)
    if not np.isfinite(cond) or cond > 1e14:
        raise LinalgError("Lyapunov system is singular (F is not Hurwitz)")
    sol = np.linalg.solve(L, rhs)
    P = np.empty((n, n))
    for (i, j), v in zip(idx, sol):
        P[i, j] = P[j, i] = v
    res = np.max(np.abs(P @ F + F.T @ P + np.eye(n)))
    if res > residual_tol * max(1.0, float(np.max(np.abs(P)))):
        raise LinalgError(f"Lyapunov residual {res:.3e} exceeds tolerance")
    return P


def lyapunov_residual(P, F) -> float:
    P = np.asarray(P, dtype=float)
    F = np.asarray(F, dtype=float)
    return float(np.max(np.abs(P @ F + F.T @ P + np.eye(F.shape[0]))))


def poly_from_roots(roots, imag_tol: float = 1e-10) -> np.ndarray:
    """Monic coefficients, highest degree first, of prod (s - r_i)."""
    coeffs = np.array([1.0 + 0j])
    for r in roots:
        coeffs = np.append(coeffs, 0j) - complex(r) * np.insert(coeffs, 0, 0j)
    scale = max(1.0, float(np.max(np.abs(coeffs))))
    if np.max(np.abs(coeffs.imag)) > imag_tol * scale:
        raise ValueError("roots are not closed under conjugation")
    return coeffs.real.copy()


def conjugate_closed(roots, tol: float = 1e-10) -> bool:
    pending = [complex(r) for r in roots]
    while pending:
        r = pending.pop()
        if abs(r.imag) <= tol * max(1.0, abs(r)):
            continue
        match = [i for i, s in enumerate(pending) if abs(s - r.conjugate()) <= tol * max(1.0, abs(r))]
        if not match:
            return False
        pending.pop(match[0])
    return True


def shift_matrix(n: int) -> np.ndarray:
    """A with ones on the superdiagonal."""
    return np.eye(n, k=1)


def eigvals(M) -> np.ndarray:
    """General eigenvalues (used only to re-check placed poles)."""
    return np.linalg.eigvals(_square(M))
