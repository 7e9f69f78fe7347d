import numpy as np
import pytest

from divdivch.assembly import build_operators
from divdivch.mesh import build_mesh


@pytest.fixture(scope="session")
def ops_sq1():
    return build_operators(build_mesh("square", 1))


@pytest.fixture(scope="session")
def ops_sq2():
    return build_operators(build_mesh("square", 2))


@pytest.fixture(scope="session")
def ops_sq3():
    return build_operators(build_mesh("square", 3))


@pytest.fixture(scope="session")
def ops_l1():
    return build_operators(build_mesh("lshape", 1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tensor_project(ops, fn, degree=12):
    """L2 projection of a tensor field ``fn(x, y) -> (..., 3)`` onto the base space."""
    import scipy.sparse.linalg as spla

    from divdivch.quadrature import triangle_rule

    q = triangle_rule(degree)
    mesh = ops.mesh
    x = mesh.to_physical(q.points)
    wK = 2.0 * mesh.areas[:, None] * q.weights[None, :]
    tab = ops.sigma_space.tabulate(q.points)
    vals = fn(x[..., 0], x[..., 1])
    loc = np.einsum("kq,kqic,kqc->ki", wK, tab.tau * np.array([1.0, 2.0, 1.0]), vals)
    rhs = np.bincount(ops.sigma_space.dofmap.ravel(), loc.ravel(), minlength=ops.sigma_space.dim)
    return spla.spsolve(ops.M_sigma.tocsc(), rhs)
