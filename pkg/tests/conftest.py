import numpy as np
import pytest
from hypothesis import settings

from probdae import SemiExplicitDAE, constrained_heat, fitzhugh_nagumo

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


def sanity_problem(g=np.sin, g_dot=np.cos, u0=(0.7, -0.7), T=1.0):
    """n=2, m=1: A = I, B = [1 1], f = 0."""
    return SemiExplicitDAE(
        A=np.eye(2), B=[[1.0, 1.0]], f=lambda t, u: np.zeros_like(u),
        g=lambda t: np.array([g(t)]), g_dot=lambda t: np.array([g_dot(t)]),
        u0=np.asarray(u0), t_span=(0.0, T), vectorized=True, name="sanity",
    )


def linear_problem(A, B, u0, T=1.0, f=None):
    """Homogeneous constraint ``B u = 0`` with a linear (or zero) source."""
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    m = B.shape[0]
    return SemiExplicitDAE(
        A=A, B=B, f=f or (lambda t, u: np.zeros_like(u)),
        g=lambda t: np.zeros(m), g_dot=lambda t: np.zeros(m),
        u0=u0, t_span=(0.0, T), vectorized=True, name="linear",
    )


def random_spd(rng, d, shift=0.5):
    X = rng.standard_normal((d, d))
    return X @ X.T / d + shift * np.eye(d)


@pytest.fixture(scope="session")
def heat():
    return constrained_heat()


@pytest.fixture(scope="session")
def heat50():
    return constrained_heat(50)


@pytest.fixture(scope="session")
def small_heat():
    return constrained_heat(20, T=0.05)


@pytest.fixture(scope="session")
def fhn():
    return fitzhugh_nagumo()


def linear_gaussian_toy(sigma0, M=100, tau=0.05, seed=0):
    """Linear problem plus an indicator equal to the ensemble spread at ``sigma0``.

    The scheme is linear in the noise, so the ensemble standard deviation at
    ``sigma`` is exactly ``sigma`` times the one at ``sigma = 1`` (common
    random numbers); setting the indicator to ``sigma0`` times that spread
    puts the optimum at ``sigma0`` up to the small bias of the sample mean.
    """
    from probdae import NoiseSpec
    from probdae.ensemble import run_ensemble

    P = linear_problem(np.diag([1.0, 2.0, 3.0]), [[1.0, 1.0, 1.0]], [1.0, -1.0, 0.0], T=1.0)
    stats, _ = run_ensemble(P, "implicit_euler", tau, NoiseSpec(1.0, 1.0, seed), M)
    return P, sigma0 * np.sqrt(stats.variance)


# outcome registry for the acceptance suite: criterion -> list of (label, passed, detail)
ACCEPTANCE: dict = {}


def record(criterion, label, passed, detail=""):
    ACCEPTANCE.setdefault(criterion, []).append((label, bool(passed), detail))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        items = ACCEPTANCE[crit]
        ok = all(p for _, p, _ in items)
        tr.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}")
        for label, p, detail in items:
            tr.write_line(f"    [{'pass' if p else 'FAIL'}] {label}: {detail}")
