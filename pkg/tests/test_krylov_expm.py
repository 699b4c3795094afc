import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from app.core.errors import ConfigurationError, ConvergenceError
from app.core.krylov_expm import arnoldi, expm_dense, expm_multiply, gmres
from app.core.operator_assembly import BoundaryCondition, assemble_diffusion
from app.core.sparse_space import project_l2


def symmetric_matrix(rng, n, low=-100.0, high=0.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(rng.uniform(low, high, n)) @ Q.T


def eig_expm(A, tau=1.0):
    lam, Q = np.linalg.eigh(A)
    return Q @ np.diag(np.exp(tau * lam)) @ Q.T


def test_arnoldi_happy_breakdown_on_identity(rng):
    fac = arnoldi(np.eye(10), rng.standard_normal(10), 5)
    assert fac.breakdown
    assert fac.m_eff == 1
    np.testing.assert_allclose(fac.H, [[1.0]])


def test_arnoldi_recovers_diagonal_spectrum():
    fac = arnoldi(np.diag([-1.0, -2.0, -3.0]), np.ones(3), 3)
    assert fac.m_eff == 3
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(fac.H).real), [-3.0, -2.0, -1.0], atol=1e-12)


def test_arnoldi_relations_on_random_symmetric_matrix(rng):
    A = symmetric_matrix(rng, 50, -1.0, 1.0)
    fac = arnoldi(A, rng.standard_normal(50), 50)
    V = fac.V
    assert np.linalg.norm(V.T @ V - np.eye(V.shape[1])) <= 1e-10
    assert np.linalg.norm(V.T @ A @ V - fac.H) <= 1e-10


def test_arnoldi_accepts_sparse_and_callables(rng):
    A = sp.diags([1.0, 2.0, 3.0, 4.0]).tocsr()
    v = rng.standard_normal(4)
    from_sparse = arnoldi(A, v, 3)
    from_callable = arnoldi(lambda x: A @ x, v, 3)
    np.testing.assert_allclose(from_sparse.H_ext, from_callable.H_ext)


def test_arnoldi_rejects_bad_input():
    with pytest.raises(ConfigurationError):
        arnoldi(np.eye(3), np.zeros(3), 2)
    with pytest.raises(ConfigurationError):
        arnoldi(np.eye(3), np.ones(3), 0)


def test_expm_dense_closed_forms():
    np.testing.assert_allclose(expm_dense(np.array([[0.0, 1.0], [0.0, 0.0]])), [[1.0, 1.0], [0.0, 1.0]], atol=1e-15)
    np.testing.assert_allclose(expm_dense(np.diag([-1.0, -2.0])), np.diag(np.exp([-1.0, -2.0])),
                               rtol=1e-14, atol=1e-16)


@pytest.mark.parametrize("scale", [1e-3, 0.5, 3.0, 40.0, 1e3])
def test_expm_dense_matches_eigendecomposition(rng, scale):
    A = symmetric_matrix(rng, 12, -1.0, 0.0)
    A *= scale / np.linalg.norm(A, 1)
    expected = eig_expm(A)
    assert np.linalg.norm(expm_dense(A) - expected) <= 1e-11 * np.linalg.norm(expected)


def test_expm_dense_agrees_with_scipy_on_nonsymmetric(rng):
    A = rng.standard_normal((8, 8))
    np.testing.assert_allclose(expm_dense(A), scipy.linalg.expm(A), rtol=1e-11, atol=1e-13)


def test_expm_dense_rejects_bad_input():
    with pytest.raises(ConfigurationError):
        expm_dense(np.ones((2, 3)))
    with pytest.raises(ConfigurationError):
        expm_dense(np.array([[np.nan]]))


def test_expm_multiply_trivial_cases(rng):
    v = rng.standard_normal(6)
    A = symmetric_matrix(rng, 6)
    np.testing.assert_array_equal(expm_multiply(A, v, 0.0), v)
    w, m_eff = expm_multiply(A, np.zeros(6), 0.3, full_output=True)
    assert m_eff == 0
    np.testing.assert_array_equal(w, 0.0)
    with pytest.raises(ConfigurationError):
        expm_multiply(A, v, np.inf)


def test_full_krylov_space_reproduces_dense_action(rng):
    A = symmetric_matrix(rng, 40)
    v = rng.standard_normal(40)
    np.testing.assert_allclose(expm_multiply(A, v, 1.0, M=40), eig_expm(A) @ v, atol=1e-10)


def test_contraction_and_semigroup(rng):
    A = symmetric_matrix(rng, 30, -20.0, 0.0)
    v = rng.standard_normal(30)
    once = expm_multiply(A, v, 0.2, M=30)
    assert np.linalg.norm(once) <= np.linalg.norm(v) * (1 + 1e-8)
    twice = expm_multiply(A, expm_multiply(A, v, 0.1, M=30), 0.1, M=30)
    np.testing.assert_allclose(twice, once, atol=1e-10)


def test_krylov_error_on_diffusion_operator(sparse_2d):
    kappa = 1.0 / (8 * np.pi ** 2)
    op = assemble_diffusion(sparse_2d, kappa, BoundaryCondition.periodic())
    v = project_l2(lambda x: np.sin(2 * np.pi * x[0]) * np.sin(2 * np.pi * x[1]), sparse_2d)
    exact = eig_expm(op.matrix.toarray(), 0.6) @ v
    error = lambda M: np.linalg.norm(expm_multiply(op.matvec, v, 0.6, M=M) - exact) / np.linalg.norm(exact)
    assert error(sparse_2d.size) <= 1e-10
    assert error(60) <= error(10) * 1.1 + 1e-12

    reference = expm_multiply(op.matvec, v, 0.6, M=500)
    small = expm_multiply(op.matvec, v, 0.6, M=25)
    assert np.linalg.norm(small - reference) <= 1e-6 * np.linalg.norm(reference)


def test_gmres_solves_nonsymmetric_system(rng):
    A = np.eye(30) + 0.1 * rng.standard_normal((30, 30))
    b = rng.standard_normal(30)
    x, history = gmres(A, b, tol=1e-12)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)
    assert history[-1] < history[0]


def test_gmres_zero_rhs_and_failure(rng):
    x, history = gmres(np.eye(4), np.zeros(4))
    np.testing.assert_array_equal(x, 0.0)
    assert history == [0.0]

    A = symmetric_matrix(rng, 40, 1.0, 1e6)
    with pytest.raises(ConvergenceError) as info:
        gmres(A, rng.standard_normal(40), tol=1e-14, restart=2, max_iter=4)
    assert info.value.residuals
