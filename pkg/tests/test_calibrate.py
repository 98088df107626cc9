import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from probdae import NoiseSpec
from probdae.calibrate import (
    VARIANCE_FLOOR, CalibrationError, bhattacharyya, calibrate_sigma, error_indicator, neg_log_pi,
)
from probdae.ensemble import run_ensemble
from probdae.calibrate import _objective

from conftest import linear_gaussian_toy, linear_problem

finite = st.floats(-1e3, 1e3)
positive = st.floats(1e-6, 1e3)


def test_unit_values():
    assert bhattacharyya(1.3, 2.0, 1.3, 2.0) == pytest.approx(0.0, abs=1e-15)
    assert bhattacharyya(0.0, 1.0, 2.0, 1.0) == pytest.approx(0.5, abs=1e-12)
    assert bhattacharyya(0.0, 4.0, 0.0, 1.0) == pytest.approx(0.25 * math.log(25 / 16), abs=1e-12)


def test_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        bhattacharyya(0.0, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        bhattacharyya(0.0, 1.0, 0.0, -1.0)


@given(finite, positive, finite, positive)
def test_symmetric_and_nonnegative(m1, v1, m2, v2):
    d12 = bhattacharyya(m1, v1, m2, v2)
    assert d12 >= -1e-15
    assert d12 == pytest.approx(bhattacharyya(m2, v2, m1, v1), rel=1e-12, abs=1e-15)


@given(finite, positive)
def test_zero_iff_identical(m, v):
    assert bhattacharyya(m, v, m, v) == pytest.approx(0.0, abs=1e-15)
    assert bhattacharyya(m, v, m + 1e-2 * (1 + abs(m)), v) > 0
    assert bhattacharyya(m, v, m, 2 * v) > 0


def test_indicator_zero_for_exact_scheme():
    # A = 0 is not admissible, so use exp_euler on f = 0, g = 0: the semigroup is exact
    P = linear_problem(np.diag([1.0, 2.0, 3.0]), [[1.0, 1.0, 1.0]], [1.0, -1.0, 0.0])
    _, E = error_indicator(P, "exp_euler", 0.1)
    assert np.max(np.abs(E)) < 1e-14


def test_indicator_scales_linearly_for_euler(heat):
    P = heat.with_horizon(0.08)
    _, E1 = error_indicator(P, "implicit_euler", 0.01)
    _, E2 = error_indicator(P, "implicit_euler", 0.005)
    ratio = np.linalg.norm(E1[-1]) / np.linalg.norm(E2[-1])
    assert abs(ratio - 2.0) <= 0.3


def test_indicator_magnitude_fhn(fhn):
    # comparable to the step-size error itself: same order as |u_tau - u_ref|
    t, E = error_indicator(fhn, "implicit_euler", 0.04)
    assert E.shape == (251, 2)
    assert 1e-4 < np.max(np.abs(E)) < 0.1
    np.testing.assert_allclose(E.sum(axis=1), 0, atol=1e-12)


def test_objective_zero_for_matched_distributions():
    rng = np.random.default_rng(0)
    u = rng.standard_normal((5, 3))
    E = rng.standard_normal((5, 3))
    assert _objective(u, E**2, u, E) == pytest.approx(0.0, abs=1e-12)


def test_objective_floors_degenerate_components():
    u = np.zeros((2, 2))
    assert _objective(u, np.zeros((2, 2)), u, np.zeros((2, 2))) == 0.0
    assert np.isfinite(_objective(u, np.ones((2, 2)), u, np.zeros((2, 2))))
    assert VARIANCE_FLOOR == 1e-30


def test_neg_log_pi_deterministic_and_finite(fhn):
    P = fhn.with_horizon(2.0)
    _, E = error_indicator(P, "implicit_euler", 0.04)
    a = neg_log_pi(P, "implicit_euler", 0.04, 0.3, 20, E)
    assert a == neg_log_pi(P, "implicit_euler", 0.04, 0.3, 20, E)
    for s in (1e-3, 0.1, 1.0, 10.0):
        v = neg_log_pi(P, "implicit_euler", 0.04, s, 20, E)
        assert np.isfinite(v) and v > 0
    with pytest.raises(ValueError):
        neg_log_pi(P, "implicit_euler", 0.04, 0.0, 20, E)


def test_toy_recovers_sigma0():
    sigma0 = 0.5
    P, E = linear_gaussian_toy(sigma0)
    rep = calibrate_sigma(P, "implicit_euler", 0.05, 100, indicators=E)
    assert abs(rep.sigma_star / sigma0 - 1) <= 0.1
    assert not rep.at_boundary
    assert all(rep.objective <= v for _, v in rep.evaluations)


def test_boundary_flag():
    P, E = linear_gaussian_toy(0.5)
    rep = calibrate_sigma(P, "implicit_euler", 0.05, 100, bracket=(2.0, 10.0), indicators=E)
    assert rep.at_boundary and rep.sigma_star == pytest.approx(2.0)
    rep = calibrate_sigma(P, "implicit_euler", 0.05, 100, bracket=(1e-3, 0.1), indicators=E)
    assert rep.at_boundary and rep.sigma_star == pytest.approx(0.1)


def test_bracket_validation():
    P, E = linear_gaussian_toy(0.5)
    with pytest.raises(ValueError):
        calibrate_sigma(P, "implicit_euler", 0.05, 10, bracket=(1.0, 0.5), indicators=E)


def test_non_finite_objective_reported(monkeypatch):
    import probdae.calibrate as cal

    P, E = linear_gaussian_toy(0.5)
    monkeypatch.setattr(cal, "neg_log_pi", lambda *a, **k: (float("nan"), None))
    with pytest.raises(CalibrationError, match="sigma="):
        calibrate_sigma(P, "implicit_euler", 0.05, 10, indicators=E)


def test_calibrated_ensemble_keeps_constraint(fhn):
    P = fhn.with_horizon(2.0)
    rep = calibrate_sigma(P, "implicit_euler", 0.04, 20, bracket=(0.01, 1.0))
    _, trajs = run_ensemble(P, "implicit_euler", 0.04, NoiseSpec(rep.sigma_star, 1.0, 0), 20,
                            store_trajectories=True)
    for tr in trajs:
        assert tr.constraint_residuals(P).max() <= 1e-9
    again = calibrate_sigma(P, "implicit_euler", 0.04, 20, bracket=(0.01, 1.0))
    assert again.sigma_star == rep.sigma_star
