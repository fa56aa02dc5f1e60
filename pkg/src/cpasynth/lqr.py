"""Continuous-time algebraic Riccati equation via the Hamiltonian stable subspace."""

import numpy as np
from scipy.linalg import schur, solve, solve_continuous_lyapunov

from .errors import NotStabilizableError


def care_residual(A, B, Q, R, P):
    return A.T @ P + P @ A - P @ B @ solve(R, B.T @ P) + Q


def solve_care(A, B, Q, R, refine=True):
    """Stabilising solution of ``A'P + PA - P B R^-1 B' P + Q = 0``.

    The ordered real Schur form of the Hamiltonian puts the n stable eigenvalues
    first; ``P = U21 U11^-1`` from the leading Schur vectors. A Newton–Kleinman
    correction polishes the result when the residual is not already tiny.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    n = A.shape[0]
    G = B @ solve(R, B.T)
    Ham = np.block([[A, -G], [-Q, -A.T]])
    scale = max(1.0, np.abs(Ham).max())
    Tm, Z, sdim = schur(Ham, output="real", sort="lhp")
    if sdim != n:
        raise NotStabilizableError(
            f"Hamiltonian has {sdim} stable eigenvalues, need {n} (not stabilisable)")
    ev = np.linalg.eigvals(Tm[:n, :n])
    if np.any(ev.real >= -1e-12 * scale):
        raise NotStabilizableError("eigenvalues on the imaginary axis")
    U11, U21 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        raise NotStabilizableError("stable subspace is not a graph (not stabilisable)")
    P = solve(U11.T, U21.T).T
    P = 0.5 * (P + P.T)
    if refine:
        for _ in range(3):
            res = np.linalg.norm(care_residual(A, B, Q, R, P))
            if res <= 1e-12 * max(1.0, np.linalg.norm(P)):
                break
            K = solve(R, B.T @ P)
            Acl = A - B @ K
            Pn = solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
            Pn = 0.5 * (Pn + Pn.T)
            if np.linalg.norm(care_residual(A, B, Q, R, Pn)) >= res:
                break
            P = Pn
    return P


def lqr_gain(A, B, Q, R):
    P = solve_care(A, B, Q, R)
    K = solve(np.atleast_2d(R), np.atleast_2d(B).T @ P)
    return K, P
