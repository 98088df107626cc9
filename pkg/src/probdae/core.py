"""Problem model for semi-explicit DAEs of index 2.

The systems handled here read

    u' + A u + B^T lam = f(t, u),
    B u               = g(t),

with ``A`` (n x n), ``B`` (m x n, full row rank) and a consistent initial value
``B u0 = g(0)``.  Everything else in the package works on this container.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ProblemError",
    "InconsistentStateError",
    "SemiExplicitDAE",
    "Trajectory",
    "h_norm",
    "check_consistency",
    "fd_jacobian",
    "uniform_grid",
]

CONSISTENCY_TOL = 1e-10
RANK_RTOL = 1e-10


class ProblemError(ValueError):
    """Raised when a problem definition violates a structural assumption."""


class InconsistentStateError(ValueError):
    """Raised when a state does not satisfy the constraint ``B u = g(t)``."""


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


def fd_jacobian(func: Callable, t: float, u: np.ndarray) -> np.ndarray:
    """Forward-difference Jacobian of ``func(t, u)`` with respect to ``u``.

    The step for component ``i`` is ``1e-7 * (1 + |u_i|)``.
    """
    u = np.asarray(u, dtype=float)
    f0 = np.asarray(func(t, u), dtype=float)
    jac = np.empty((f0.size, u.size))
    for i in range(u.size):
        h = 1e-7 * (1.0 + abs(u[i]))
        up = u.copy()
        up[i] += h
        jac[:, i] = (np.asarray(func(t, up), dtype=float) - f0) / h
    return jac


@dataclass(frozen=True, eq=False)
class SemiExplicitDAE:
    """A finite-dimensional semi-explicit index-2 DAE.

    Parameters
    ----------
    A, B : array_like
        Differential operator (n x n) and constraint operator (m x n).
    f : callable
        ``f(t, u) -> n-vector``.  With ``vectorized=True`` it must also accept
        a stack of states of shape ``(M, n)`` and return ``(M, n)``.
    g, g_dot : callable
        Constraint data ``g(t) -> m-vector`` and its time derivative.
    u0 : array_like
        Consistent initial value.
    t_span : (float, float)
        ``(0, T)``.
    h_weight : array_like, optional
        Positive weights of the discrete H inner product (defaults to ones).
    f_jac : callable, optional
        ``f_jac(t, u) -> (n, n)``; finite differences are used when absent.
    garding_shift : float
        Allowed Garding shift ``c``: the check on the kernel is that the
        symmetric part of ``Z^T (A + c I) Z`` is positive definite.  Zero means
        strict ellipticity.
    """

    A: np.ndarray
    B: np.ndarray
    f: Callable
    g: Callable
    g_dot: Callable
    u0: np.ndarray
    t_span: tuple = (0.0, 1.0)
    h_weight: Optional[np.ndarray] = None
    f_jac: Optional[Callable] = None
    vectorized: bool = False
    garding_shift: float = 0.0
    name: str = "dae"
    consistency_tol: float = CONSISTENCY_TOL
    _kernel_min_eig: float = field(default=np.nan, init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(_frozen(self.A))
        B = np.atleast_2d(_frozen(self.B))
        u0 = _frozen(self.u0).ravel()
        n = A.shape[0]
        if A.shape != (n, n):
            raise ProblemError(f"A must be square, got shape {A.shape}")
        if B.shape[1] != n:
            raise ProblemError(f"B has {B.shape[1]} columns, expected {n}")
        if u0.shape != (n,):
            raise ProblemError(f"u0 has length {u0.size}, expected {n}")
        m = B.shape[0]
        if not 0 < m < n:
            raise ProblemError(f"need 0 < m < n, got m={m}, n={n}")
        w = np.ones(n) if self.h_weight is None else _frozen(self.h_weight).ravel()
        if w.shape != (n,) or np.any(w <= 0):
            raise ProblemError("h_weight must be a positive n-vector")
        w.setflags(write=False)
        t0, T = (float(s) for s in self.t_span)
        if t0 != 0.0 or not T > 0.0:
            raise ProblemError(f"t_span must be (0, T) with T > 0, got {self.t_span}")

        sv = np.linalg.svd(B, compute_uv=False)
        if sv[-1] <= RANK_RTOL * sv[0]:
            raise ProblemError("constraint operator not inf-sup stable (B is rank deficient)")

        from .saddle import kernel_basis  # local import: saddle depends on core

        Z = kernel_basis(B)
        shifted = Z.T @ (A + self.garding_shift * np.eye(n)) @ Z
        min_eig = np.linalg.eigvalsh(0.5 * (shifted + shifted.T)).min()
        if not min_eig > 0.0:
            raise ProblemError(
                "A is not elliptic on ker B "
                f"(smallest eigenvalue of the shifted kernel operator: {min_eig:.3e})"
            )

        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "h_weight", w)
        object.__setattr__(self, "t_span", (0.0, T))
        object.__setattr__(self, "_kernel_min_eig", float(min_eig))

        residual = np.max(np.abs(B @ u0 - self.eval_g(0.0)))
        if residual > self.consistency_tol:
            raise InconsistentStateError(
                f"initial value is inconsistent: |B u0 - g(0)| = {residual:.3e}"
            )

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[0]

    @property
    def T(self) -> float:
        return self.t_span[1]

    @property
    def is_symmetric(self) -> bool:
        return bool(np.allclose(self.A, self.A.T, rtol=1e-12, atol=1e-14 * np.abs(self.A).max()))

    def eval_g(self, t: float) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.g(t), dtype=float))

    def eval_g_dot(self, t: float) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.g_dot(t), dtype=float))

    def eval_f(self, t: float, U: np.ndarray) -> np.ndarray:
        """Evaluate ``f`` on a single state ``(n,)`` or a stack ``(M, n)``."""
        U = np.asarray(U, dtype=float)
        if U.ndim == 1 or self.vectorized:
            return np.asarray(self.f(t, U), dtype=float)
        return np.stack([np.asarray(self.f(t, u), dtype=float) for u in U])

    def jacobian(self, t: float, u: np.ndarray) -> np.ndarray:
        if self.f_jac is not None:
            return np.asarray(self.f_jac(t, u), dtype=float)
        return fd_jacobian(self.f, t, u)

    def with_horizon(self, T: float) -> "SemiExplicitDAE":
        """Copy of the problem on ``[0, T]``."""
        return SemiExplicitDAE(
            A=self.A, B=self.B, f=self.f, g=self.g, g_dot=self.g_dot, u0=self.u0,
            t_span=(0.0, T), h_weight=self.h_weight, f_jac=self.f_jac,
            vectorized=self.vectorized, garding_shift=self.garding_shift,
            name=self.name, consistency_tol=self.consistency_tol,
        )


@dataclass
class Trajectory:
    """Time-indexed states ``U^0 ... U^N`` on a uniform grid."""

    times: np.ndarray
    states: np.ndarray
    multipliers: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("states and times disagree in length")

    @property
    def tau(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    def constraint_residuals(self, problem: SemiExplicitDAE) -> np.ndarray:
        """``max_i |(B U^n - g(t^n))_i|`` for every n."""
        g = np.stack([problem.eval_g(t) for t in self.times])
        return np.max(np.abs(self.states @ problem.B.T - g), axis=1)

    def at(self, times: np.ndarray) -> "Trajectory":
        """Subsample onto ``times``, which must be grid points of this trajectory."""
        times = np.asarray(times, dtype=float)
        idx = np.rint((times - self.times[0]) / self.tau).astype(int)
        if np.any(np.abs(self.times[idx] - times) > 1e-9 * max(1.0, abs(times[-1]))):
            raise ValueError("requested times are not on the trajectory grid")
        return Trajectory(self.times[idx], self.states[idx])


def h_norm(v, problem: SemiExplicitDAE):
    """Discrete H-norm ``sqrt(sum_i w_i v_i^2)``; works along the last axis."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != problem.n:
        raise ValueError(f"vector length {v.shape[-1]} does not match n={problem.n}")
    return np.sqrt(np.sum(problem.h_weight * v * v, axis=-1))


def check_consistency(problem: SemiExplicitDAE, tol: float = CONSISTENCY_TOL) -> bool:
    return bool(np.max(np.abs(problem.B @ problem.u0 - problem.eval_g(0.0))) <= tol)


def uniform_grid(T: float, tau: float) -> tuple[int, np.ndarray]:
    """Number of steps and the time grid for ``[0, T]`` with step ``tau``."""
    if not tau > 0:
        raise ValueError(f"step size must be positive, got {tau}")
    ratio = T / tau
    N = int(round(ratio))
    if N < 1 or abs(ratio - N) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"T/tau = {ratio!r} is not an integer")
    return N, np.arange(N + 1) * tau
