"""Deterministic and probabilistic one-step schemes for semi-explicit DAEs.

Four schemes are available: implicit Euler and the implicit midpoint rule
(both solve one saddle-point system per step), the exponential Euler method
and a second-order exponential integrator.  The exponential schemes have two
interchangeable realizations: ``path="kernel"`` works in coordinates of an
orthonormal basis of ``ker B`` with phi-functions, ``path="saddle"`` follows
the stationary-saddle-solve formulation with the homogeneous evolution done
exactly by the kernel semigroup.

All step functions accept one state ``(n,)`` or a stack ``(M, n)`` with one
row per realization and return the same shape.

Noise placement
---------------
* implicit Euler / midpoint: the perturbation is added to the dynamic
  right-hand side of the saddle system.  ``noise_injection="raw"`` uses the
  Gaussian vector as drawn (its component outside ``ker B`` only changes the
  multiplier), ``"a_projected"`` first maps it onto ``ker B``.
* exponential schemes: the A-projected perturbation is added after the
  deterministic update.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import InconsistentStateError, SemiExplicitDAE, Trajectory, uniform_grid
from .noise import NoiseSpec, noise_block
from .phi import PhiSet, build_phi
from .saddle import KernelDecomposition, SaddleSolver, decompose, project_noise_A

__all__ = [
    "SCHEMES",
    "SchemeId",
    "StepWorkspace",
    "NewtonConvergenceError",
    "ConstraintDriftError",
    "NonSymmetricKernelWarning",
    "step_implicit_euler",
    "step_midpoint",
    "step_exp_euler",
    "step_exp2",
    "integrate",
    "integrate_batch",
]

SCHEMES = {"implicit_euler": 1, "midpoint": 2, "exp_euler": 1, "exp2": 2}
CONSTRAINT_TOL = 1e-9
NEWTON_TOL = 1e-12
NEWTON_MAXIT = 50


class NewtonConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last increment {residual:.3e})")
        self.residual = residual


class ConstraintDriftError(RuntimeError):
    """A step left the constraint manifold beyond tolerance."""


class NonSymmetricKernelWarning(UserWarning):
    """phi_0(-tau A_ker) is only guaranteed to be a contraction for symmetric A."""


@dataclass(frozen=True)
class SchemeId:
    name: str
    path: str = "kernel"
    noise_injection: Optional[str] = None

    def __post_init__(self):
        if self.name not in SCHEMES:
            raise ValueError(f"unknown scheme {self.name!r}; choose from {sorted(SCHEMES)}")
        if self.path not in ("kernel", "saddle"):
            raise ValueError(f"path must be 'kernel' or 'saddle', got {self.path!r}")
        inj = self.noise_injection
        if inj is None:
            inj = "a_projected" if self.is_exponential else "raw"
            object.__setattr__(self, "noise_injection", inj)
        if inj not in ("raw", "a_projected"):
            raise ValueError(f"noise_injection must be 'raw' or 'a_projected', got {inj!r}")
        if self.is_exponential and inj == "raw":
            raise ValueError("exponential schemes add noise after the update; it must be A-projected")

    @property
    def order(self) -> int:
        return SCHEMES[self.name]

    @property
    def is_exponential(self) -> bool:
        return self.name in ("exp_euler", "exp2")

    @classmethod
    def coerce(cls, scheme) -> "SchemeId":
        return scheme if isinstance(scheme, cls) else cls(str(scheme))


class StepWorkspace:
    """Per-trajectory caches for one problem: factorizations, phi-functions, B^- g.

    Everything that depends on ``tau`` is rebuilt when ``tau`` changes.
    """

    def __init__(self, problem: SemiExplicitDAE, decomp: KernelDecomposition | None = None):
        self.problem = problem
        self.decomp = decomp or decompose(problem)
        self.tau: Optional[float] = None
        self._solvers: dict = {}
        self._phi: Optional[PhiSet] = None
        self._binv: dict = {}

    def prepare(self, tau: float) -> None:
        if tau != self.tau:
            self.tau = tau
            self._solvers.clear()
            self._phi = None

    def implicit_solver(self, tau: float, weight: float) -> SaddleSolver:
        """Factorization of ``[[I + weight*tau*A, tau*B^T], [B, 0]]``."""
        self.prepare(tau)
        key = weight
        if key not in self._solvers:
            P = self.problem
            self._solvers[key] = SaddleSolver(np.eye(P.n) + weight * tau * P.A, P.B, bt_scale=tau)
        return self._solvers[key]

    def phi(self, tau: float) -> PhiSet:
        self.prepare(tau)
        if self._phi is None:
            self._phi = build_phi(self.decomp.A_ker, tau)
        return self._phi

    def _right_inverse(self, which: str, t: float) -> np.ndarray:
        key = (which, t)
        if key not in self._binv:
            if len(self._binv) > 16:
                self._binv.clear()
            y = self.problem.eval_g(t) if which == "g" else self.problem.eval_g_dot(t)
            x, _ = self.decomp.A_solver.solve(np.zeros(self.problem.n), y, check=True)
            x.setflags(write=False)
            self._binv[key] = x
        return self._binv[key]

    def b_inv_g(self, t: float) -> np.ndarray:
        return self._right_inverse("g", t)

    def b_inv_g_dot(self, t: float) -> np.ndarray:
        return self._right_inverse("g_dot", t)


def _as_stack(U):
    U = np.asarray(U, dtype=float)
    return (U[None, :], True) if U.ndim == 1 else (U, False)


def _check_consistent(problem: SemiExplicitDAE, t: float, U: np.ndarray) -> None:
    g = problem.eval_g(t)
    res = np.max(np.abs(U @ problem.B.T - g))
    if res > CONSTRAINT_TOL * max(1.0, np.max(np.abs(g))):
        raise InconsistentStateError(f"state is inconsistent at t={t:g}: |B U - g| = {res:.3e}")


def _newton_row(problem, solver: SaddleSolver, base, tau, t_f, u_fixed, a, c, r2, V0):
    """Full Newton on the saddle system for a single realization."""
    n, m = problem.n, problem.m
    S = solver.matrix
    x = np.concatenate([V0, np.zeros(m)])
    for _ in range(NEWTON_MAXIT):
        V = x[:n]
        arg = a * u_fixed + c * V
        F = S @ x - np.concatenate([base + tau * problem.eval_f(t_f, arg), r2])
        J = S.copy()
        J[:n, :n] -= tau * c * problem.jacobian(t_f, arg)
        dx = np.linalg.solve(J, -F)
        x = x + dx
        inc = np.max(np.abs(dx[:n]))
        if inc <= NEWTON_TOL * max(1.0, np.max(np.abs(x[:n]))):
            return x[:n], x[n:]
    raise NewtonConvergenceError("Newton iteration did not converge", inc)


def _implicit_solve(problem, solver: SaddleSolver, base, tau, t_f, u_fixed, a, c, r2):
    """Solve ``K V + tau B^T lam = base + tau f(t_f, a u_fixed + c V), B V = r2`` row-wise.

    Chord iteration with the cached linear factorization; rows that stall or
    diverge fall back to full Newton with the Jacobian of ``f``.
    """
    M = base.shape[0]
    r2 = np.broadcast_to(np.atleast_2d(r2), (M, problem.m))
    V = u_fixed.copy()
    lam = np.zeros((M, problem.m))
    active = np.arange(M)
    prev = np.full(M, np.inf)
    growth = np.zeros(M, dtype=int)
    for _ in range(NEWTON_MAXIT):
        arg = a * u_fixed[active] + c * V[active]
        rhs = base[active] + tau * problem.eval_f(t_f, arg)
        Vn, ln = solver.solve(rhs, r2[active])
        inc = np.max(np.abs(Vn - V[active]), axis=1)
        V[active], lam[active] = Vn, ln
        growth[active] = np.where(inc > prev[active], growth[active] + 1, 0)
        prev[active] = inc
        done = inc <= NEWTON_TOL * np.maximum(1.0, np.max(np.abs(Vn), axis=1))
        bad = ~np.isfinite(inc) | (growth[active] >= 3)
        keep = ~done & ~bad
        if np.any(bad):
            for k in active[bad]:
                V[k], lam[k] = _newton_row(problem, solver, base[k], tau, t_f, u_fixed[k], a, c,
                                           r2[k], u_fixed[k])
        active = active[keep]
        if active.size == 0:
            return V, lam
    for k in active:
        V[k], lam[k] = _newton_row(problem, solver, base[k], tau, t_f, u_fixed[k], a, c, r2[k],
                                   V[k])
    return V, lam


def step_implicit_euler(problem, decomp, tn, Un, tau, xi=None, *, workspace=None,
                        constraint_shift=None, check=True):
    """One implicit Euler step; returns ``(U_next, lambda_next)``.

    Solves ``(I + tau A) U + tau B^T lam = Un + tau f(tn + tau, U) + xi`` with
    ``B U = g(tn + tau)`` (plus ``constraint_shift`` when given).
    """
    ws = workspace or StepWorkspace(problem, decomp)
    U, single = _as_stack(Un)
    if check and constraint_shift is None:
        _check_consistent(problem, tn, U)
    base = U if xi is None else U + np.atleast_2d(xi)
    r2 = problem.eval_g(tn + tau)
    if constraint_shift is not None:
        r2 = r2 + np.atleast_2d(constraint_shift)
    solver = ws.implicit_solver(tau, 1.0)
    V, lam = _implicit_solve(problem, solver, base, tau, tn + tau, U, 0.0, 1.0, r2)
    return (V[0], lam[0]) if single else (V, lam)


def step_midpoint(problem, decomp, tn, Un, tau, xi=None, *, workspace=None,
                  constraint_shift=None, check=True):
    """One implicit midpoint step; returns ``(U_next, lambda_next)``.

    ``(I + tau/2 A) U + tau B^T lam = (I - tau/2 A) Un + tau f(tn + tau/2, (Un + U)/2) + xi``.
    """
    ws = workspace or StepWorkspace(problem, decomp)
    U, single = _as_stack(Un)
    if check and constraint_shift is None:
        _check_consistent(problem, tn, U)
    base = U - 0.5 * tau * (U @ problem.A.T)
    if xi is not None:
        base = base + np.atleast_2d(xi)
    r2 = problem.eval_g(tn + tau)
    if constraint_shift is not None:
        r2 = r2 + np.atleast_2d(constraint_shift)
    solver = ws.implicit_solver(tau, 0.5)
    V, lam = _implicit_solve(problem, solver, base, tau, tn + 0.5 * tau, U, 0.5, 0.5, r2)
    return (V[0], lam[0]) if single else (V, lam)


def _warn_kernel_path(problem, path):
    if path == "kernel" and not problem.is_symmetric:
        warnings.warn(
            "A is not symmetric: phi_0(-tau A_ker) need not be a contraction",
            NonSymmetricKernelWarning,
            stacklevel=3,
        )


def _exp_euler(problem, ws: StepWorkspace, tn, U, tau, path):
    """Deterministic exponential Euler on a stack; returns the update and the source term."""
    Z = ws.decomp.Z
    phis = ws.phi(tau)
    bg0, bg1 = ws.b_inv_g(tn), ws.b_inv_g(tn + tau)
    source = problem.eval_f(tn, U) - ws.b_inv_g_dot(tn)
    if path == "kernel":
        c = (U - bg0) @ Z
        c1 = c @ phis.phi0.T + tau * ((source @ Z) @ phis.phi1.T)
        return bg1 + c1 @ Z.T, source
    # A w + B^T nu = f(tn, U) - B^- g_dot(tn), B w = 0
    w, _ = ws.decomp.A_solver.solve(source, np.zeros((U.shape[0], problem.m)))
    z0 = U - bg0 - w
    z1 = ((z0 @ Z) @ phis.phi0.T) @ Z.T
    return bg1 + z1 + w, source


def _exp2(problem, ws: StepWorkspace, tn, U, tau, path):
    u_eul, source0 = _exp_euler(problem, ws, tn, U, tau, path)
    diff = problem.eval_f(tn + tau, u_eul) - ws.b_inv_g_dot(tn + tau) - source0
    Z = ws.decomp.Z
    phis = ws.phi(tau)
    if path == "kernel":
        return u_eul + ((diff @ Z) @ (tau * phis.phi2).T) @ Z.T
    zeros = np.zeros((U.shape[0], problem.m))
    w_bar, _ = ws.decomp.A_solver.solve(diff, zeros)
    w_hat, _ = ws.decomp.A_solver.solve(w_bar / tau, zeros)
    z1 = ((w_hat @ Z) @ phis.phi0.T) @ Z.T
    return u_eul + z1 - w_hat + w_bar


def step_exp_euler(problem, decomp, workspace, tn, Un, tau, xi=None, *, path="kernel", check=True):
    """One exponential Euler step.

    ``xi`` must already lie in ``ker B`` (see :func:`probdae.saddle.project_noise_A`);
    it is added after the deterministic update.
    """
    ws = workspace or StepWorkspace(problem, decomp)
    _warn_kernel_path(problem, path)
    U, single = _as_stack(Un)
    if check:
        _check_consistent(problem, tn, U)
    out, _ = _exp_euler(problem, ws, tn, U, tau, path)
    if xi is not None:
        out = out + np.atleast_2d(xi)
    return out[0] if single else out


def step_exp2(problem, decomp, workspace, tn, Un, tau, xi=None, *, path="kernel", check=True):
    """One step of the second-order exponential integrator.

    ``U_Eul + tau phi_2(-tau A_ker) [f(tn+tau, U_Eul) - B^- g_dot(tn+tau) - f(tn, Un) + B^- g_dot(tn)]``
    on the kernel.  The saddle path computes the correction through the two
    stationary solves for ``w_bar`` and ``w_hat`` and one homogeneous evolution.
    """
    ws = workspace or StepWorkspace(problem, decomp)
    _warn_kernel_path(problem, path)
    U, single = _as_stack(Un)
    if check:
        _check_consistent(problem, tn, U)
    out = _exp2(problem, ws, tn, U, tau, path)
    if xi is not None:
        out = out + np.atleast_2d(xi)
    return out[0] if single else out


def integrate_batch(problem: SemiExplicitDAE, scheme, tau: float, noise: NoiseSpec | None,
                    trajectory_indices: Sequence[int], *, perturb_constraint: bool = False,
                    workspace: StepWorkspace | None = None, check_constraint: bool = True):
    """Integrate several realizations at once.

    Returns ``(times, states, multipliers)`` with ``states`` of shape
    ``(M, N+1, n)``; ``multipliers`` is ``(M, N, m)`` for the implicit schemes
    and ``None`` for the exponential ones.
    """
    scheme = SchemeId.coerce(scheme)
    N, times = uniform_grid(problem.T, tau)
    idx = list(trajectory_indices)
    M = len(idx)
    ws = workspace or StepWorkspace(problem)
    noisy = noise is not None and noise.active
    if perturb_constraint and scheme.is_exponential:
        raise ValueError("constraint perturbation is only available for implicit_euler and midpoint")
    if scheme.is_exponential and scheme.path == "kernel" and not problem.is_symmetric:
        warnings.warn(
            f"{scheme.name} on the kernel path with non-symmetric A: no contraction guarantee",
            NonSymmetricKernelWarning,
            stacklevel=2,
        )

    states = np.empty((M, N + 1, problem.n))
    states[:, 0] = problem.u0
    lams = None if scheme.is_exponential else np.empty((M, N, problem.m))
    U = states[:, 0].copy()
    for k in range(N):
        t = times[k]
        xi = shift = None
        if noisy and perturb_constraint:
            shift = noise_block(noise, problem.m, tau, k, idx, constraint=True)
        elif noisy:
            xi = noise_block(noise, problem.n, tau, k, idx)
            if scheme.noise_injection == "a_projected":
                xi = project_noise_A(problem, ws.decomp, xi)
        if scheme.name == "implicit_euler":
            U, lam = step_implicit_euler(problem, ws.decomp, t, U, tau, xi, workspace=ws,
                                         constraint_shift=shift, check=False)
        elif scheme.name == "midpoint":
            U, lam = step_midpoint(problem, ws.decomp, t, U, tau, xi, workspace=ws,
                                   constraint_shift=shift, check=False)
        else:
            update = _exp_euler(problem, ws, t, U, tau, scheme.path)[0] \
                if scheme.name == "exp_euler" else _exp2(problem, ws, t, U, tau, scheme.path)
            U = update if xi is None else update + xi
        if not np.all(np.isfinite(U)):
            bad = [idx[j] for j in np.flatnonzero(~np.all(np.isfinite(U), axis=1))]
            raise FloatingPointError(f"non-finite state at step {k + 1} in trajectories {bad}")
        if check_constraint and not perturb_constraint:
            g = problem.eval_g(times[k + 1])
            res = np.max(np.abs(U @ problem.B.T - g))
            if res > CONSTRAINT_TOL * max(1.0, np.max(np.abs(g))):
                raise ConstraintDriftError(
                    f"constraint residual {res:.3e} at t={times[k + 1]:g} ({scheme.name})"
                )
        states[:, k + 1] = U
        if lams is not None:
            lams[:, k] = lam
    return times, states, lams


def integrate(problem: SemiExplicitDAE, scheme, tau: float, noise: NoiseSpec | None = None,
              trajectory_index: int = 0, *, perturb_constraint: bool = False,
              workspace: StepWorkspace | None = None, check_constraint: bool = True) -> Trajectory:
    """Integrate one realization over ``problem.t_span`` with uniform step ``tau``.

    ``noise=None`` or ``sigma == 0`` gives the deterministic scheme.
    """
    times, states, lams = integrate_batch(
        problem, scheme, tau, noise, [trajectory_index], perturb_constraint=perturb_constraint,
        workspace=workspace, check_constraint=check_constraint,
    )
    return Trajectory(times, states[0], None if lams is None else lams[0])
