"""Calibration of the noise scale against a step-halving error indicator.

The ensemble at noise scale ``sigma`` and the deterministic solution are
compared step by step and component by component: the ensemble marginal is
approximated by ``N(mean, variance)``, the deterministic solution is given the
spread of the indicator, ``N(u_det, E^2)``.  The objective is the sum of the
Bhattacharyya distances between these Gaussians over all steps and
components; ``sigma`` is chosen to minimize it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import SemiExplicitDAE
from .ensemble import run_ensemble
from .integrators import SchemeId, integrate
from .noise import NoiseSpec

__all__ = [
    "VARIANCE_FLOOR",
    "CalibrationError",
    "CalibrationReport",
    "error_indicator",
    "bhattacharyya",
    "neg_log_pi",
    "calibrate_sigma",
]

VARIANCE_FLOOR = 1e-30
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class CalibrationError(RuntimeError):
    pass


def error_indicator(problem: SemiExplicitDAE, scheme, tau: float):
    """Step-halving indicator ``E^n = u^n_tau - u^(2n)_(tau/2)``.

    Returns ``(times, E)`` with ``E`` of shape ``(N+1, n)``; both runs are
    deterministic.
    """
    scheme = SchemeId.coerce(scheme)
    coarse = integrate(problem, scheme, tau)
    fine = integrate(problem, scheme, tau / 2)
    return coarse.times, coarse.states - fine.states[::2]


def bhattacharyya(mu1, var1, mu2, var2):
    """Bhattacharyya distance between ``N(mu1, var1)`` and ``N(mu2, var2)``.

    Works elementwise on arrays.

    Examples
    --------
    >>> float(bhattacharyya(0.0, 1.0, 2.0, 1.0))
    0.5
    """
    var1 = np.asarray(var1, dtype=float)
    var2 = np.asarray(var2, dtype=float)
    if np.any(~(var1 > 0)) or np.any(~(var2 > 0)):
        raise ValueError("variances must be positive; floor degenerate components first")
    diff = np.asarray(mu1, dtype=float) - np.asarray(mu2, dtype=float)
    ratio = var1 / var2
    return 0.25 * diff**2 / (var1 + var2) + 0.25 * np.log(0.25 * (ratio + 1.0 / ratio + 2.0))


def _objective(mean, variance, u_det, indicators) -> float:
    v1 = np.maximum(variance, VARIANCE_FLOOR)
    v2 = np.maximum(np.asarray(indicators) ** 2, VARIANCE_FLOOR)
    return float(np.sum(bhattacharyya(mean, v1, u_det, v2)))


def neg_log_pi(problem: SemiExplicitDAE, scheme, tau: float, sigma: float, M: int, indicators,
               *, deterministic=None, p: Optional[float] = None, seed: int = 0,
               workers: int = 1, return_stats: bool = False):
    """Summed componentwise Bhattacharyya distance between ensemble and indicator.

    The ensemble uses realizations ``0 .. M-1`` with base ``seed``, so repeated
    calls share their random numbers.  ``p`` defaults to the order of the scheme.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if M < 2:
        raise ValueError("need at least two realizations for a variance")
    scheme = SchemeId.coerce(scheme)
    if deterministic is None:
        deterministic = integrate(problem, scheme, tau).states
    noise = NoiseSpec(sigma=sigma, p=scheme.order if p is None else p, seed=seed)
    stats, _ = run_ensemble(problem, scheme, tau, noise, M, workers=workers)
    value = _objective(stats.mean, stats.variance, deterministic, indicators)
    return (value, stats) if return_stats else value


@dataclass
class CalibrationReport:
    tau: float
    times: np.ndarray
    indicators: np.ndarray
    evaluations: list
    sigma_star: float
    objective: float
    at_boundary: bool
    variances: np.ndarray

    @property
    def mean_marginal_variance(self) -> np.ndarray:
        """Per-step variance averaged over components for ``sigma_star``."""
        return self.variances.mean(axis=1)

    @property
    def indicator_scale(self) -> np.ndarray:
        """Per-step root mean square of the indicator over components."""
        return np.sqrt(np.mean(self.indicators**2, axis=1))

    def std_to_indicator_ratio(self) -> np.ndarray:
        """``sqrt(mean variance) / rms(E)`` for the steps after the initial one."""
        return np.sqrt(self.mean_marginal_variance[1:]) / self.indicator_scale[1:]


def calibrate_sigma(problem: SemiExplicitDAE, scheme, tau: float, M: int = 100,
                    bracket: tuple = (1e-3, 10.0), *, p: Optional[float] = None, seed: int = 0,
                    workers: int = 1, rtol: float = 1e-2, indicators=None) -> CalibrationReport:
    """Minimize :func:`neg_log_pi` over ``log sigma`` by golden-section search.

    The search stops once the bracket is narrower than ``rtol`` relative to
    ``sigma``.  Both bracket ends are evaluated too; ``at_boundary`` is set
    when the best value is attained at one of them.
    """
    lo, hi = (float(b) for b in bracket)
    if not 0 < lo < hi:
        raise ValueError(f"bracket must satisfy 0 < lo < hi, got {bracket}")
    scheme = SchemeId.coerce(scheme)
    if indicators is None:
        times, indicators = error_indicator(problem, scheme, tau)
    else:
        indicators = np.asarray(indicators, dtype=float)
        times = integrate(problem, scheme, tau).times
    u_det = integrate(problem, scheme, tau).states
    cache: dict = {}

    def evaluate(log_s: float) -> float:
        if log_s not in cache:
            s = math.exp(log_s)
            val, stats = neg_log_pi(problem, scheme, tau, s, M, indicators, deterministic=u_det,
                                    p=p, seed=seed, workers=workers, return_stats=True)
            if not math.isfinite(val):
                raise CalibrationError(f"objective is not finite at sigma={s:g}")
            cache[log_s] = (val, stats.variance)
        return cache[log_s][0]

    a, b = math.log(lo), math.log(hi)
    evaluate(a)
    evaluate(b)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = evaluate(c), evaluate(d)
    while b - a > math.log1p(rtol):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = evaluate(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = evaluate(d)

    best = min(cache, key=lambda k: cache[k][0])
    evaluations = sorted((math.exp(k), v[0]) for k, v in cache.items())
    return CalibrationReport(
        tau=tau,
        times=np.asarray(times),
        indicators=indicators,
        evaluations=evaluations,
        sigma_star=math.exp(best),
        objective=cache[best][0],
        at_boundary=best in (math.log(lo), math.log(hi)),
        variances=cache[best][1],
    )
