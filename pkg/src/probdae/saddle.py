"""Stationary constrained linear algebra.

Saddle-point solves

    [K     s B^T] [x ]   [r1]
    [B     0    ] [mu] = [r2],

the right inverse of ``B`` defined through ``A`` (so that ``Z^T A B^- y = 0``),
orthonormal kernel bases and the A-projection of noise onto ``ker B``.
"""

from __future__ import annotations

import warnings
import weakref
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .core import RANK_RTOL, ProblemError

__all__ = [
    "SaddlePointError",
    "SaddleSolver",
    "KernelDecomposition",
    "kernel_basis",
    "solve_saddle",
    "decompose",
    "b_right_inverse",
    "project_noise_A",
]

SADDLE_RTOL = 1e-10


class SaddlePointError(np.linalg.LinAlgError):
    """Singular saddle matrix or a solve that misses its residual tolerance."""


def kernel_basis(B) -> np.ndarray:
    """Orthonormal basis of ``ker B`` as the columns of an n x (n - m) matrix.

    Uses a column-pivoted QR factorization of ``B^T``.  Column signs are fixed
    so that the largest-magnitude entry of each column is positive.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    m, n = B.shape
    if m >= n:
        raise ProblemError(
            f"constraint operator not inf-sup stable: kernel is empty (m={m}, n={n})"
        )
    Q, R, _ = sla.qr(B.T, mode="full", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size < m or diag[-1] <= RANK_RTOL * diag[0]:
        raise ProblemError("constraint operator not inf-sup stable (B is rank deficient)")
    Z = Q[:, m:].copy()
    idx = np.argmax(np.abs(Z), axis=0)
    signs = np.sign(Z[idx, np.arange(Z.shape[1])])
    signs[signs == 0] = 1.0
    Z *= signs
    return Z


class SaddleSolver:
    """Reusable LU factorization of ``[[K, s B^T], [B, 0]]``.

    ``solve`` accepts a single right-hand side or a stack with one row per
    realization.
    """

    def __init__(self, K, B, bt_scale: float = 1.0):
        K = np.asarray(K, dtype=float)
        B = np.atleast_2d(np.asarray(B, dtype=float))
        n, m = K.shape[0], B.shape[0]
        self.K, self.B, self.bt_scale = K, B, float(bt_scale)
        self.n, self.m = n, m
        S = np.zeros((n + m, n + m))
        S[:n, :n] = K
        S[:n, n:] = bt_scale * B.T
        S[n:, :n] = B
        self.matrix = S
        with warnings.catch_warnings():
            # singularity is reported below with our own error
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(S, check_finite=True)
        d = np.abs(np.diag(lu))
        if d.min() <= 1e-14 * d.max():
            raise SaddlePointError("saddle point matrix is singular to working precision")
        self._lu = (lu, piv)

    def solve(self, r1, r2, check: bool = False):
        r1 = np.asarray(r1, dtype=float)
        r2 = np.asarray(r2, dtype=float)
        single = r1.ndim == 1
        R1 = np.atleast_2d(r1)
        R2 = np.broadcast_to(np.atleast_2d(r2), (R1.shape[0], self.m))
        rhs = np.concatenate([R1, R2], axis=1).T
        sol = sla.lu_solve(self._lu, rhs, check_finite=False).T
        x, mu = sol[:, : self.n], sol[:, self.n :]
        if check:
            self._check(x, mu, R1, R2)
        if single:
            return x[0], mu[0]
        return x, mu

    def _check(self, x, mu, R1, R2):
        res1 = x @ self.K.T + self.bt_scale * mu @ self.B - R1
        res2 = x @ self.B.T - R2
        scale = 1.0 + np.linalg.norm(R1, axis=1) + np.linalg.norm(R2, axis=1)
        res = np.maximum(np.linalg.norm(res1, axis=1), np.linalg.norm(res2, axis=1))
        if np.any(~np.isfinite(res)) or np.any(res > SADDLE_RTOL * scale):
            worst = float(np.max(res / scale))
            raise SaddlePointError(f"saddle solve residual check failed (relative {worst:.3e})")


def solve_saddle(K, B, r1, r2, bt_scale: float = 1.0):
    """Solve ``K x + s B^T mu = r1, B x = r2`` and verify the residuals."""
    return SaddleSolver(K, B, bt_scale).solve(r1, r2, check=True)


@dataclass(frozen=True, eq=False)
class KernelDecomposition:
    """Null-space basis ``Z``, projected operator ``Z^T A Z`` and a saddle solver for ``A``."""

    Z: np.ndarray
    A_ker: np.ndarray
    A_solver: SaddleSolver

    @classmethod
    def from_problem(cls, problem) -> "KernelDecomposition":
        Z = kernel_basis(problem.B)
        Z.setflags(write=False)
        A_ker = Z.T @ problem.A @ Z
        A_ker.setflags(write=False)
        return cls(Z=Z, A_ker=A_ker, A_solver=SaddleSolver(problem.A, problem.B))

    def coordinates(self, v):
        """Kernel coordinates ``Z^T v`` (row-wise for stacks)."""
        return np.asarray(v) @ self.Z

    def lift(self, c):
        return np.asarray(c) @ self.Z.T


_DECOMPOSITIONS: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def decompose(problem) -> KernelDecomposition:
    """Cached :class:`KernelDecomposition` of ``problem``."""
    try:
        return _DECOMPOSITIONS[problem]
    except KeyError:
        dec = KernelDecomposition.from_problem(problem)
        _DECOMPOSITIONS[problem] = dec
        return dec


def b_right_inverse(problem, y, decomp: KernelDecomposition | None = None, check: bool = True):
    """Solve ``A x + B^T nu = 0, B x = y``; ``x`` realizes ``B^- y``.

    ``y`` may be an m-vector or a stack ``(M, m)``.
    """
    decomp = decomp or decompose(problem)
    y = np.asarray(y, dtype=float)
    zeros = np.zeros(y.shape[:-1] + (problem.n,)) if y.ndim > 1 else np.zeros(problem.n)
    return decomp.A_solver.solve(zeros, y, check=check)


def project_noise_A(problem, decomp: KernelDecomposition | None, h, check: bool = False):
    """A-projection of ``h`` onto ``ker B``.

    Solves ``A xi + B^T nu = A h, B xi = 0``, i.e. ``xi = Z (Z^T A Z)^{-1} Z^T A h``.
    ``h`` is the already-scaled perturbation; stacks of shape ``(M, n)`` are
    projected row-wise.
    """
    decomp = decomp or decompose(problem)
    h = np.asarray(h, dtype=float)
    r2 = np.zeros(h.shape[:-1] + (problem.m,)) if h.ndim > 1 else np.zeros(problem.m)
    xi, _ = decomp.A_solver.solve(h @ problem.A.T, r2, check=check)
    return xi
