"""Scaled Gaussian perturbations with counter-based seeding.

Every draw is a pure function of ``(seed, trajectory_index, step_index)``: the
generator for one step of one trajectory is seeded by hashing that tuple, so
ensembles reproduce bit for bit regardless of how the work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["NoiseSpec", "sample_perturbation", "sample_constraint_perturbation", "noise_block"]

_SEED_MASK = (1 << 64) - 1
_DYNAMIC_STREAM = 0
_CONSTRAINT_STREAM = 1


@dataclass(frozen=True)
class NoiseSpec:
    """Noise scale ``sigma``, noise order ``p`` and base ``seed``.

    The per-step perturbation is ``sigma * tau**(p + 1/2) * xi`` with ``xi``
    a vector of i.i.d. standard normals.
    """

    sigma: float = 0.0
    p: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if not self.p > 0:
            raise ValueError(f"p must be positive, got {self.p}")

    @property
    def active(self) -> bool:
        return self.sigma > 0

    def scale(self, tau: float) -> float:
        return self.sigma * tau ** (self.p + 0.5)


def _standard_normal(seed: int, trajectory_index: int, step_index: int, dim: int, stream: int):
    key = [int(seed) & _SEED_MASK, int(trajectory_index), int(step_index), stream]
    return np.random.default_rng(key).standard_normal(dim)


def sample_perturbation(spec: NoiseSpec, dim: int, tau: float, step_index: int,
                        trajectory_index: int) -> np.ndarray:
    """``sigma * tau**(p+1/2) * xi`` for one step of one trajectory."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if spec.sigma == 0:
        return np.zeros(dim)
    return spec.scale(tau) * _standard_normal(spec.seed, trajectory_index, step_index, dim,
                                              _DYNAMIC_STREAM)


def sample_constraint_perturbation(spec: NoiseSpec, dim: int, step_index: int,
                                   trajectory_index: int) -> np.ndarray:
    """Unscaled ``N(0, sigma^2)`` draw used to perturb the constraint data.

    Only meant for demonstrating why the constraint must stay untouched.
    """
    if spec.sigma == 0:
        return np.zeros(dim)
    return spec.sigma * _standard_normal(spec.seed, trajectory_index, step_index, dim,
                                         _CONSTRAINT_STREAM)


def noise_block(spec: NoiseSpec, dim: int, tau: float, step_index: int, trajectory_indices,
                constraint: bool = False) -> np.ndarray:
    """Stack of perturbations, one row per trajectory index."""
    idx = list(trajectory_indices)
    if constraint:
        rows = [sample_constraint_perturbation(spec, dim, step_index, k) for k in idx]
    else:
        rows = [sample_perturbation(spec, dim, tau, step_index, k) for k in idx]
    return np.stack(rows) if rows else np.zeros((0, dim))
