import numpy as np
import pytest
import scipy.sparse as sp

from divdivch import linsolve


def _saddle(n=40, m=10, seed=0):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=0.2, random_state=seed) + n * sp.eye(n)
    A = A + A.T
    B = sp.random(m, n, density=0.3, random_state=seed + 1) + sp.eye(m, n)
    K = sp.bmat([[A, B.T], [B, None]]).tocsr()
    return K, rng.standard_normal(n + m)


def test_backend_name():
    assert linsolve.backend() in ("superlu", "pardiso")


def test_small_systems_use_superlu():
    K, _ = _saddle()
    assert linsolve.factorize(K).kind == "superlu"


@pytest.mark.parametrize("prefer", ["superlu", "pardiso"])
def test_solve_residual(prefer):
    if prefer == "pardiso" and linsolve.backend() != "pardiso":
        pytest.skip("PARDISO not available")
    K, b = _saddle()
    lu = linsolve.factorize(K, prefer)
    x = lu.solve(b)
    assert np.abs(K @ x - b).max() <= 1e-10 * np.abs(b).max()
    X = lu.solve(np.column_stack([b, 2 * b]))
    assert np.allclose(X[:, 1], 2 * x)
