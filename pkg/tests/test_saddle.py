import numpy as np
import pytest
from hypothesis import given, strategies as st

from probdae.core import ProblemError
from probdae.saddle import (
    SaddlePointError, SaddleSolver, b_right_inverse, decompose, kernel_basis, project_noise_A,
    solve_saddle,
)

from conftest import linear_problem, random_spd


def test_kernel_basis_orthonormal_and_in_kernel():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((3, 8))
    Z = kernel_basis(B)
    assert Z.shape == (8, 5)
    np.testing.assert_allclose(Z.T @ Z, np.eye(5), atol=1e-13)
    np.testing.assert_allclose(B @ Z, 0, atol=1e-13)
    # sign convention: the largest entry of every column is positive
    idx = np.argmax(np.abs(Z), axis=0)
    assert np.all(Z[idx, np.arange(5)] > 0)


def test_kernel_basis_two_by_one():
    Z = kernel_basis([[1.0, 1.0]])
    np.testing.assert_allclose(np.abs(Z[:, 0]), [2**-0.5, 2**-0.5])


def test_kernel_basis_rank_deficient():
    with pytest.raises(ProblemError, match="inf-sup"):
        kernel_basis([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])


def test_saddle_solve_against_dense_oracle():
    rng = np.random.default_rng(2)
    K = random_spd(rng, 6)
    B = rng.standard_normal((2, 6))
    r1, r2 = rng.standard_normal(6), rng.standard_normal(2)
    x, mu = solve_saddle(K, B, r1, r2, bt_scale=0.3)
    S = np.block([[K, 0.3 * B.T], [B, np.zeros((2, 2))]])
    np.testing.assert_allclose(np.concatenate([x, mu]), np.linalg.solve(S, np.concatenate([r1, r2])),
                               rtol=1e-12, atol=1e-12)


def test_saddle_stacked_equals_single():
    rng = np.random.default_rng(3)
    solver = SaddleSolver(random_spd(rng, 5), rng.standard_normal((1, 5)))
    R1, R2 = rng.standard_normal((4, 5)), rng.standard_normal((4, 1))
    X, MU = solver.solve(R1, R2, check=True)
    for k in range(4):
        x, mu = solver.solve(R1[k], R2[k])
        np.testing.assert_allclose(X[k], x, rtol=1e-14, atol=1e-14)
        np.testing.assert_allclose(MU[k], mu, rtol=1e-14, atol=1e-14)


def test_singular_saddle_matrix():
    B = np.array([[1.0, 0.0, 0.0]])
    K = np.diag([1.0, 0.0, 1.0])  # singular on ker B
    with pytest.raises(SaddlePointError):
        SaddleSolver(K, B)


def _spd_problem(seed, n=6, m=2):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((m, n))
    Z = kernel_basis(B)
    return linear_problem(random_spd(rng, n), B, Z @ rng.standard_normal(n - m)), rng


def test_right_inverse_is_A_orthogonal_to_kernel():
    P, rng = _spd_problem(4)
    dec = decompose(P)
    y = rng.standard_normal(2)
    x, _ = b_right_inverse(P, y)
    np.testing.assert_allclose(P.B @ x, y, atol=1e-12)
    np.testing.assert_allclose(dec.Z.T @ P.A @ x, 0, atol=1e-12)


def test_decompose_is_cached():
    P, _ = _spd_problem(5)
    assert decompose(P) is decompose(P)


@given(st.integers(0, 10_000))
def test_projection_oracle_and_idempotence(seed):
    P, rng = _spd_problem(seed % 50)
    dec = decompose(P)
    h = np.random.default_rng(seed).standard_normal(P.n)
    xi = project_noise_A(P, dec, h, check=True)
    Z, Ak = dec.Z, dec.A_ker
    np.testing.assert_allclose(xi, Z @ np.linalg.solve(Ak, Z.T @ P.A @ h), rtol=1e-9, atol=1e-11)
    np.testing.assert_allclose(P.B @ xi, 0, atol=1e-11)
    np.testing.assert_allclose(project_noise_A(P, dec, xi), xi, rtol=1e-9, atol=1e-11)


def test_projection_of_kernel_vector_is_identity():
    P, rng = _spd_problem(7)
    dec = decompose(P)
    v = dec.lift(rng.standard_normal(4))
    np.testing.assert_allclose(project_noise_A(P, dec, v), v, atol=1e-12)
