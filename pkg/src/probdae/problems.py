"""Benchmark problems and fine-step reference solutions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import SemiExplicitDAE, Trajectory, uniform_grid

__all__ = [
    "HeatDiscretization",
    "constrained_heat",
    "fitzhugh_nagumo",
    "reference_solution",
    "get_problem",
    "REFERENCE_REFINEMENT",
]

REFERENCE_REFINEMENT = 20


@dataclass(frozen=True, eq=False)
class HeatDiscretization:
    """Second-order finite differences on ``(0, 1)`` with homogeneous Dirichlet data.

    The boundary unknowns are eliminated, so ``laplacian`` acts on the
    ``grid_points`` interior nodes ``x_i = i * dx``, ``dx = 1 / (grid_points + 1)``.
    ``quadrature`` holds the trapezoidal weights, which reduce to ``dx`` on the
    interior since the boundary values vanish.
    """

    grid_points: int = 100

    def __post_init__(self):
        if self.grid_points < 10:
            raise ValueError(f"grid_points must be at least 10, got {self.grid_points}")

    @property
    def dx(self) -> float:
        return 1.0 / (self.grid_points + 1)

    @property
    def x(self) -> np.ndarray:
        return np.arange(1, self.grid_points + 1) * self.dx

    @property
    def laplacian(self) -> np.ndarray:
        n = self.grid_points
        L = -2.0 * np.eye(n) + np.eye(n, k=1) + np.eye(n, k=-1)
        return L / self.dx**2

    @property
    def quadrature(self) -> np.ndarray:
        return np.full(self.grid_points, self.dx)


def constrained_heat(grid_points: int = 100, T: float = 0.1) -> SemiExplicitDAE:
    """Heat equation with the nonlinearity ``u^2`` and a weighted-mean constraint.

    ``u' - u_xx + B^T lam = u^2`` on ``(0, 1)`` with ``int u(x) sin(pi x) dx = t``
    and ``u(0) = sin(2 pi x)^3``.
    """
    disc = HeatDiscretization(grid_points)
    x = disc.x
    B = (disc.quadrature * np.sin(np.pi * x))[None, :]
    return SemiExplicitDAE(
        A=-disc.laplacian,
        B=B,
        f=lambda t, u: u * u,
        g=lambda t: np.array([t]),
        g_dot=lambda t: np.array([1.0]),
        u0=np.sin(2.0 * np.pi * x) ** 3,
        t_span=(0.0, T),
        h_weight=np.full(grid_points, disc.dx),
        f_jac=lambda t, u: np.diag(2.0 * u),
        vectorized=True,
        name="heat",
    )


def _fhn_f(t, u):
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    out[..., 0] = -u[..., 0] ** 3
    out[..., 1] = 1.0 / 15.0
    return out


def _fhn_jac(t, u):
    return np.array([[-3.0 * u[0] ** 2, 0.0], [0.0, 0.0]])


def fitzhugh_nagumo(T: float = 10.0) -> SemiExplicitDAE:
    """FitzHugh-Nagumo model with the algebraic coupling ``V + R = sin t``.

    ``A`` is not positive on ``ker B`` (the projected operator equals -2/15);
    the problem is admitted through a Garding shift of 1.
    """
    return SemiExplicitDAE(
        A=np.array([[-3.0, -3.0], [1.0 / 3.0, 1.0 / 15.0]]),
        B=np.array([[1.0, 1.0]]),
        f=_fhn_f,
        g=lambda t: np.array([np.sin(t)]),
        g_dot=lambda t: np.array([np.cos(t)]),
        u0=np.array([-1.0, 1.0]),
        t_span=(0.0, T),
        f_jac=_fhn_jac,
        vectorized=True,
        garding_shift=1.0,
        name="fitzhugh",
    )


def get_problem(name: str, **params) -> SemiExplicitDAE:
    """Construct a built-in problem by name (``"heat"`` or ``"fitzhugh"``)."""
    key = name.lower().replace("-", "_")
    if key in ("heat", "constrained_heat"):
        return constrained_heat(**params)
    if key in ("fitzhugh", "fitzhugh_nagumo", "fhn"):
        return fitzhugh_nagumo(**params)
    raise ValueError(f"unknown problem {name!r}; choose 'heat' or 'fitzhugh'")


def reference_solution(problem: SemiExplicitDAE, t_grid, experiment_tau: Optional[float] = None,
                       refine: int = REFERENCE_REFINEMENT) -> Trajectory:
    """Fine-step deterministic solution sampled at ``t_grid``.

    Uses the second-order exponential integrator for symmetric ``A`` and the
    midpoint rule otherwise, with step ``experiment_tau / refine``.
    ``experiment_tau`` defaults to the spacing of ``t_grid``.
    """
    from .integrators import SchemeId, integrate

    t_grid = np.asarray(t_grid, dtype=float)
    if experiment_tau is None:
        experiment_tau = float(np.min(np.diff(t_grid)))
    tau_ref = experiment_tau / refine
    uniform_grid(problem.T, tau_ref)
    scheme = SchemeId("exp2") if problem.is_symmetric else SchemeId("midpoint")
    return integrate(problem, scheme, tau_ref).at(t_grid)
