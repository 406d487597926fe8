import numpy as np
import pytest
import scipy.sparse as sp

from dualmix.linalg import DirectSolver, SingularSystemError, embed, pardiso_available, solve


def _saddle(rng, n=40, m=15):
    A = sp.random(n, n, density=0.2, random_state=1) + 5 * sp.eye(n)
    A = A + A.T
    B = sp.random(m, n, density=0.3, random_state=2) + sp.eye(m, n)
    return sp.bmat([[A, B.T], [B, None]], format="csr")


def test_superlu_solves_saddle(rng):
    K = _saddle(rng)
    b = rng.standard_normal(K.shape[0])
    x = solve(K, b, backend="superlu")
    assert np.abs(K @ x - b).max() < 1e-11 * np.abs(b).max()


@pytest.mark.skipif(not pardiso_available(), reason="pypardiso not installed")
def test_pardiso_matches_superlu(rng):
    K = _saddle(rng)
    b = rng.standard_normal(K.shape[0])
    x1 = solve(K, b, backend="superlu")
    x2 = solve(K, b, backend="pardiso")
    assert np.allclose(x1, x2, atol=1e-10)


@pytest.mark.skipif(not pardiso_available(), reason="pypardiso not installed")
def test_pardiso_reuses_analysis(rng):
    K = _saddle(rng)
    s = DirectSolver("pardiso")
    s.factorize(K)
    s.factorize(2 * K)
    assert s.analyses == 1 and s.factorizations == 2
    b = rng.standard_normal(K.shape[0])
    assert np.abs(2 * K @ s.solve(b) - b).max() < 1e-10


def test_singular_matrix_detected():
    K = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SingularSystemError):
        solve(K, np.array([1.0, 0.0]), backend="superlu")


def test_solve_before_factorize():
    with pytest.raises(RuntimeError):
        DirectSolver().solve(np.ones(2))


def test_unknown_backend():
    with pytest.raises(ValueError):
        DirectSolver("umfpack")


def test_embed_keeps_values_on_larger_pattern(rng):
    K = sp.random(30, 30, density=0.1, random_state=3, format="csr")
    pattern = (K + sp.random(30, 30, density=0.1, random_state=4) + sp.eye(30)).tocsr()
    E = embed(K, pattern)
    assert E.nnz == pattern.nnz
    assert abs(E - K).max() == 0


def test_embed_rejects_entries_outside_pattern():
    with pytest.raises(ValueError):
        embed(sp.csr_matrix(np.ones((2, 2))), sp.eye(2, format="csr"))
