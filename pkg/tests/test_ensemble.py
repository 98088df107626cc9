import numpy as np
import pytest
from hypothesis import given, strategies as st

from probdae import NoiseSpec, Trajectory
from probdae.ensemble import (
    ConvergenceTable, EnsembleError, EnsembleStats, convergence_study, estimate_order, mse_error,
    read_csv, run_ensemble, write_csv,
)
from probdae.problems import reference_solution

from conftest import sanity_problem


def test_zero_sigma_zero_variance(small_heat):
    stats, _ = run_ensemble(small_heat, "implicit_euler", 0.005, NoiseSpec(0.0), 7)
    np.testing.assert_array_equal(stats.variance, 0.0)


def test_rerun_bit_identical_and_worker_independent(small_heat):
    noise = NoiseSpec(4.0, 1.0, 42)
    a, _ = run_ensemble(small_heat, "exp_euler", 0.005, noise, 25, chunk_size=4)
    b, _ = run_ensemble(small_heat, "exp_euler", 0.005, noise, 25, chunk_size=4, workers=3)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.m2, b.m2)


def test_streaming_equals_two_pass(small_heat):
    noise = NoiseSpec(4.0, 0.5, 1)
    stats, trajs = run_ensemble(small_heat, "midpoint", 0.005, noise, 23, chunk_size=5,
                                store_trajectories=True)
    X = np.stack([t.states for t in trajs])
    np.testing.assert_allclose(stats.mean, X.mean(axis=0), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(stats.variance, X.var(axis=0, ddof=1), rtol=1e-10, atol=1e-15)
    assert stats.M == 23


@given(st.lists(st.integers(1, 6), min_size=1, max_size=5), st.integers(0, 1000))
def test_merge_equals_two_pass(sizes, seed):
    rng = np.random.default_rng(seed)
    parts = [rng.standard_normal((k, 3, 2)) * 10 + 5 for k in sizes]
    acc = EnsembleStats(np.arange(3.0), np.zeros((3, 2)), np.zeros((3, 2)), 0)
    for part in parts:
        acc = acc.merge(EnsembleStats.from_states(np.arange(3.0), part))
    X = np.concatenate(parts)
    np.testing.assert_allclose(acc.mean, X.mean(axis=0), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(acc.m2, ((X - X.mean(0)) ** 2).sum(0), rtol=1e-10, atol=1e-10)
    assert np.all(acc.variance >= 0) or acc.M < 2


def test_single_realization_variance_undefined():
    s = EnsembleStats.from_states(np.arange(2.0), np.ones((1, 2, 3)))
    assert np.all(np.isnan(s.variance))


def test_zero_realizations_rejected():
    P = sanity_problem()
    with pytest.raises(ValueError):
        run_ensemble(P, "implicit_euler", 0.1, NoiseSpec(1.0), 0)


def test_ensemble_error_carries_index(monkeypatch, small_heat):
    import probdae.ensemble as ens

    real = ens.integrate_batch

    def flaky(problem, scheme, tau, noise, idx, **kw):
        if 13 in list(idx):
            raise FloatingPointError("boom")
        return real(problem, scheme, tau, noise, idx, **kw)

    monkeypatch.setattr(ens, "integrate_batch", flaky)
    with pytest.raises(EnsembleError) as info:
        run_ensemble(small_heat, "implicit_euler", 0.005, NoiseSpec(1.0), 20, chunk_size=8)
    assert info.value.index == 13


def test_mse_trivial_cases():
    P = sanity_problem()
    t = np.array([0.0, 1.0])
    ref = Trajectory(t, np.zeros((2, 2)))
    assert mse_error(ref, ref, P) == 0.0
    tr = Trajectory(t, np.array([[3.0, 0.0], [4.0, 0.0]]))
    assert mse_error(tr, ref, P, "sup") == pytest.approx(4.0)
    assert mse_error(tr, ref, P, "final_time") == pytest.approx(4.0)
    tr2 = Trajectory(t, np.array([[0.0, 0.0], [0.0, 2.0]]))
    assert mse_error([tr, tr2], ref, P, "final") == pytest.approx(np.sqrt((16 + 4) / 2))
    with pytest.raises(ValueError):
        mse_error(tr, Trajectory(np.array([0.0, 0.5]), np.zeros((2, 2))), P)
    with pytest.raises(ValueError):
        mse_error(tr, ref, P, "mean")


def test_mse_from_stats_equals_from_trajectories(small_heat):
    stats, trajs = run_ensemble(small_heat, "implicit_euler", 0.005, NoiseSpec(4.0, 0.5, 3), 12,
                                store_trajectories=True)
    ref = reference_solution(small_heat, stats.times)
    for mode in ("sup", "final"):
        assert mse_error(stats, ref, small_heat, mode) == pytest.approx(
            mse_error(trajs, ref, small_heat, mode), rel=1e-10)


def test_estimate_order_exact_power_law():
    taus = [0.1, 0.05, 0.025, 0.0125]
    slope, hw = estimate_order([(t, 3 * t**2) for t in taus])
    assert slope == pytest.approx(2.0, abs=1e-12)
    assert hw < 1e-12


def test_estimate_order_errors():
    with pytest.raises(ValueError, match="≥ 3"):
        estimate_order([(0.1, 1.0), (0.05, 0.5)])
    with pytest.raises(ValueError):
        estimate_order([(0.1, 1.0), (0.05, 0.0), (0.02, 0.1)])


@given(st.floats(0.2, 3.0), st.floats(1e-3, 1e3))
def test_estimate_order_recovers_exponent(r, c):
    taus = 0.1 / 2.0 ** np.arange(5)
    slope, _ = estimate_order(zip(taus, c * taus**r))
    assert slope == pytest.approx(r, abs=1e-9)


def test_convergence_table_validation():
    with pytest.raises(ValueError):
        ConvergenceTable([0.1, 0.2, 0.05], [1, 2, 3])


def test_error_monotone_in_tau(small_heat):
    tab = convergence_study(small_heat, "implicit_euler", [0.01, 0.005, 0.0025, 0.00125],
                            NoiseSpec(4.0, 1.0, 0), 50, mode="final")
    for a, b in zip(tab.errors[:-1], tab.errors[1:]):
        assert b <= 1.1 * a


def test_csv_round_trip(tmp_path):
    rows = [(0.1, 1 / 3), (0.05, np.pi * 1e-7)]
    path = write_csv(tmp_path / "x.csv", ["tau", "rms_error"], rows)
    header, back = read_csv(path)
    assert header == ["tau", "rms_error"]
    assert [tuple(map(float, r)) for r in back] == rows
