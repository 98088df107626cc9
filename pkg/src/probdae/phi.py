"""Matrix phi-functions of ``-tau * A_ker``.

``phi_0(z) = e^z`` and ``phi_{k+1}(z) = (phi_k(z) - phi_k(0)) / z`` with
``phi_k(0) = 1/k!``.  The default evaluation embeds the argument in an
augmented block matrix whose exponential carries ``phi_1`` and ``phi_2`` as
off-diagonal blocks; this needs no inverse of ``A_ker`` and does not suffer
from cancellation when ``tau * |A_ker|`` is small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

__all__ = ["PhiSet", "build_phi", "recursion_residuals"]

_COND_LIMIT = 1e8


@dataclass(frozen=True, eq=False)
class PhiSet:
    phi0: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray
    tau: float

    def __iter__(self):
        return iter((self.phi0, self.phi1, self.phi2))


def _augmented(X: np.ndarray, k_max: int) -> list[np.ndarray]:
    d = X.shape[0]
    W = np.zeros(((k_max + 1) * d, (k_max + 1) * d))
    W[:d, :d] = X
    eye = np.eye(d)
    for j in range(k_max):
        W[j * d:(j + 1) * d, (j + 1) * d:(j + 2) * d] = eye
    E = sla.expm(W)
    return [E[:d, j * d:(j + 1) * d] for j in range(k_max + 1)]


def _recursion(X: np.ndarray, k_max: int) -> list[np.ndarray]:
    eye = np.eye(X.shape[0])
    phis = [sla.expm(X)]
    for k in range(k_max):
        phis.append(np.linalg.solve(X, phis[-1] - eye / math.factorial(k)))
    return phis


def build_phi(A_ker, tau: float, k_max: int = 2, method: str = "augmented") -> PhiSet:
    """phi_0, phi_1, phi_2 of ``-tau * A_ker``.

    ``method="recursion"`` evaluates the defining recursion with direct solves;
    it silently switches to the augmented form when ``tau * A_ker`` is
    ill-conditioned.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if k_max != 2:
        raise ValueError("only k_max = 2 is supported")
    X = -tau * np.atleast_2d(np.asarray(A_ker, dtype=float))
    if method not in ("augmented", "recursion"):
        raise ValueError(f"unknown method {method!r}")
    # overflow is detected by the finiteness check below
    with np.errstate(all="ignore"):
        if method == "recursion" and np.linalg.cond(X) < _COND_LIMIT:
            phis = _recursion(X, k_max)
        else:
            phis = _augmented(X, k_max)
    for k, P in enumerate(phis):
        if not np.all(np.isfinite(P)):
            raise FloatingPointError(f"phi_{k} has non-finite entries")
        P.setflags(write=False)
    return PhiSet(phis[0], phis[1], phis[2], float(tau))


def recursion_residuals(A_ker, phis: PhiSet) -> list[float]:
    """Max-norm residuals of ``X phi_{k+1} - (phi_k - phi_k(0) I)`` for k = 0, 1."""
    X = -phis.tau * np.atleast_2d(np.asarray(A_ker, dtype=float))
    eye = np.eye(X.shape[0])
    seq = [phis.phi0, phis.phi1, phis.phi2]
    return [
        float(np.max(np.abs(X @ seq[k + 1] - (seq[k] - eye / math.factorial(k)))))
        for k in range(2)
    ]
