"""Monte Carlo ensembles, mean-square errors and convergence-order estimates."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats as sps

from .core import SemiExplicitDAE, Trajectory, h_norm, uniform_grid
from .integrators import SchemeId, StepWorkspace, integrate_batch
from .noise import NoiseSpec
from .problems import REFERENCE_REFINEMENT, reference_solution

__all__ = [
    "EnsembleStats",
    "EnsembleError",
    "ConvergenceTable",
    "run_ensemble",
    "mse_error",
    "estimate_order",
    "convergence_study",
    "IMPLICIT_LADDER",
    "EXPONENTIAL_LADDER",
    "EXPONENTIAL_HORIZON",
    "P_SWEEPS",
    "write_csv",
    "read_csv",
]

IMPLICIT_LADDER = (0.025, 0.0125, 0.00625, 0.003125, 0.0015625)
EXPONENTIAL_LADDER = tuple(2.0**-k for k in range(6, 11))
# the dyadic ladder does not divide T = 0.1; the next dyadic horizon is used instead
EXPONENTIAL_HORIZON = 0.125
P_SWEEPS = {
    "implicit_euler": (0.5, 1.0, 1.5),
    "midpoint": (0.5, 1.0, 1.5, 2.0),
    "exp_euler": (0.5, 1.0, 1.5),
    "exp2": (0.5, 1.0, 1.5, 2.0),
}
DEFAULT_CHUNK = 100


class EnsembleError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"trajectory {index} failed: {cause}")
        self.index = index
        self.cause = cause


@dataclass
class EnsembleStats:
    """Per-step mean and componentwise unbiased variance of an ensemble.

    ``m2`` is the running sum of squared deviations; it is kept so that
    partial statistics merge exactly and so that ``M = 1`` stays usable.
    """

    times: np.ndarray
    mean: np.ndarray
    m2: np.ndarray
    M: int

    @classmethod
    def from_states(cls, times, states) -> "EnsembleStats":
        """Two-pass statistics of a stack ``(M, N+1, n)``."""
        states = np.asarray(states, dtype=float)
        mean = states.mean(axis=0)
        m2 = np.sum((states - mean) ** 2, axis=0)
        return cls(np.asarray(times, dtype=float), mean, m2, states.shape[0])

    def merge(self, other: "EnsembleStats") -> "EnsembleStats":
        """Combine with statistics of a disjoint set of realizations."""
        if self.M == 0:
            return other
        n = self.M + other.M
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.M / n)
        m2 = self.m2 + other.m2 + delta**2 * (self.M * other.M / n)
        return EnsembleStats(self.times, mean, m2, n)

    @property
    def variance(self) -> np.ndarray:
        if self.M < 2:
            return np.full_like(self.mean, np.nan)
        return np.maximum(self.m2 / (self.M - 1), 0.0)


def _chunks(M: int, size: int):
    return [range(s, min(s + size, M)) for s in range(0, M, size)]


def _run_chunk(problem, scheme, tau, noise, idx, perturb_constraint, check_constraint):
    ws = StepWorkspace(problem)
    try:
        return integrate_batch(problem, scheme, tau, noise, idx, workspace=ws,
                               perturb_constraint=perturb_constraint,
                               check_constraint=check_constraint)
    except Exception as exc:
        # find the first offending realization
        for k in idx:
            try:
                integrate_batch(problem, scheme, tau, noise, [k], workspace=StepWorkspace(problem),
                                perturb_constraint=perturb_constraint,
                                check_constraint=check_constraint)
            except Exception as inner:
                raise EnsembleError(k, inner) from inner
        raise EnsembleError(idx[0], exc) from exc


def run_ensemble(problem: SemiExplicitDAE, scheme, tau: float, noise: NoiseSpec | None, M: int,
                 *, workers: int = 1, store_trajectories: bool = False,
                 perturb_constraint: bool = False, check_constraint: bool = True,
                 chunk_size: int = DEFAULT_CHUNK):
    """Run realizations ``0 .. M-1`` and return ``(stats, trajectories)``.

    Realizations are processed in fixed-size chunks and reduced in index
    order, so the statistics do not depend on ``workers``.
    ``trajectories`` is empty unless ``store_trajectories`` is set.
    """
    if M < 1:
        raise ValueError(f"need at least one realization, got M={M}")
    scheme = SchemeId.coerce(scheme)
    if not (noise is not None and noise.active):
        # every realization is the deterministic run; compute it once so the
        # ensemble is exactly degenerate
        times, states, lams = _run_chunk(problem, scheme, tau, None, [0], perturb_constraint,
                                         check_constraint)
        stats = EnsembleStats(times, states[0].copy(), np.zeros_like(states[0]), M)
        lam = None if lams is None else lams[0]
        trajs = [Trajectory(times, states[0], lam) for _ in range(M)] if store_trajectories else []
        return stats, trajs
    chunks = _chunks(M, chunk_size)
    args = (problem, scheme, tau, noise)

    def work(idx):
        return _run_chunk(*args, list(idx), perturb_constraint, check_constraint)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(idx) for idx in chunks]

    N, times = uniform_grid(problem.T, tau)
    acc = EnsembleStats(times, np.zeros((N + 1, problem.n)), np.zeros((N + 1, problem.n)), 0)
    trajectories = []
    for idx, (times, states, lams) in zip(chunks, results):
        acc = acc.merge(EnsembleStats.from_states(times, states))
        if store_trajectories:
            for j in range(len(idx)):
                trajectories.append(Trajectory(times, states[j], None if lams is None else lams[j]))
    return acc, trajectories


def _normalize_mode(mode: str) -> str:
    if mode in ("sup", "sup_over_steps"):
        return "sup"
    if mode in ("final", "final_time"):
        return "final"
    raise ValueError(f"unknown error mode {mode!r}; use 'sup' or 'final'")


def _check_grid(times, reference: Trajectory):
    if times.shape != reference.times.shape or not np.allclose(times, reference.times,
                                                              rtol=0, atol=1e-12):
        raise ValueError("time grids of the ensemble and the reference do not match")


def mse_error(data, reference: Trajectory, problem: SemiExplicitDAE, mode: str = "sup") -> float:
    """Root-mean-square H-error ``((1/M) sum_k ||u(t^n) - U^n_k||_H^2)^(1/2)``.

    ``data`` is an :class:`EnsembleStats`, a single :class:`Trajectory` or a
    sequence of them.  ``mode="sup"`` maximizes over all grid times,
    ``mode="final"`` evaluates at the last one.
    """
    mode = _normalize_mode(mode)
    if isinstance(data, EnsembleStats):
        _check_grid(data.times, reference)
        bias = h_norm(data.mean - reference.states, problem) ** 2
        spread = np.sum(problem.h_weight * data.m2, axis=-1) / data.M
        per_step = bias + spread
    else:
        trajs = [data] if isinstance(data, Trajectory) else list(data)
        if not trajs:
            raise ValueError("no trajectories given")
        for tr in trajs:
            _check_grid(tr.times, reference)
        per_step = np.mean([h_norm(tr.states - reference.states, problem) ** 2 for tr in trajs],
                           axis=0)
    per_step = np.sqrt(np.maximum(per_step, 0.0))
    return float(per_step.max() if mode == "sup" else per_step[-1])


def estimate_order(table) -> tuple[float, float]:
    """Least-squares slope of ``log(error)`` against ``log(tau)``.

    Returns ``(slope, half_width)`` where the half-width is the standard
    error of the slope.
    """
    pts = np.asarray([(t, e) for t, e in table], dtype=float)
    if pts.shape[0] < 3:
        raise ValueError("need ≥ 3 step sizes to estimate an order")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("step sizes and errors must be positive and finite")
    fit = sps.linregress(np.log(pts[:, 0]), np.log(pts[:, 1]))
    return float(fit.slope), float(fit.stderr)


@dataclass
class ConvergenceTable:
    taus: np.ndarray
    errors: np.ndarray
    slope: float = field(init=False)
    half_width: float = field(init=False)
    label: str = ""

    def __post_init__(self):
        self.taus = np.asarray(self.taus, dtype=float)
        self.errors = np.asarray(self.errors, dtype=float)
        if self.taus.shape != self.errors.shape:
            raise ValueError("taus and errors differ in length")
        if np.any(np.diff(self.taus) >= 0):
            raise ValueError("step sizes must be strictly decreasing")
        self.slope, self.half_width = estimate_order(zip(self.taus, self.errors))

    @property
    def rows(self):
        return list(zip(self.taus.tolist(), self.errors.tolist()))


def convergence_study(problem: SemiExplicitDAE, scheme, taus: Sequence[float],
                      noise: NoiseSpec | None, M: int, *, mode: str = "sup", workers: int = 1,
                      reference: Optional[Trajectory] = None) -> ConvergenceTable:
    """RMS errors over a step-size ladder against one fine reference.

    The reference is computed once at ``min(taus) / 20`` unless given; it
    must contain every ladder grid point.
    """
    taus = sorted((float(t) for t in taus), reverse=True)
    if len(taus) < 3:
        raise ValueError("need ≥ 3 step sizes to estimate an order")
    if reference is None:
        tau_ref = taus[-1] / REFERENCE_REFINEMENT
        _, fine = uniform_grid(problem.T, tau_ref)
        reference = reference_solution(problem, fine, experiment_tau=taus[-1])
    errors = []
    for tau in taus:
        stats, _ = run_ensemble(problem, scheme, tau, noise, M, workers=workers)
        errors.append(mse_error(stats, reference.at(stats.times), problem, mode))
    scheme = SchemeId.coerce(scheme)
    p = noise.p if noise is not None else float("nan")
    return ConvergenceTable(taus, errors, label=f"{scheme.name} p={p:g}")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write rows with 17 significant digits for floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
