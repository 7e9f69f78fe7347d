import math

import numpy as np
import pytest

from divdivch.benchmarks import EIGEN_LEVEL_OFFSET, EIGEN_REF, TABLE5_REF
from divdivch.biharmonic import (METHODS, BiharmonicData, BiharmonicProblem, solve_eigen,
                                  solve_source, table5)
from divdivch.manufactured import ManufacturedCase, Spatial
from divdivch.mesh import build_mesh


def test_cr_level1_error():
    e = solve_source(BiharmonicProblem(build_mesh("lshape", 1), "cr")).errors
    assert e["u"] == pytest.approx(TABLE5_REF["cr"]["u"][0], rel=1e-2)


def test_source_errors_decrease_for_conforming_methods():
    errs = table5([1, 2, 3])
    for m in ("mixed", "morley"):
        u = [e["u"] for e in errs[m]]
        assert u[0] > u[1] > u[2]
    cu = [e["u"] for e in errs["cr"]]
    assert cu[0] < cu[1] < cu[2]


@pytest.mark.parametrize("method", METHODS)
def test_eigen_dense_and_sparse_agree(method):
    mesh = build_mesh("lshape", 3)
    a = solve_eigen(BiharmonicProblem(mesh, method), 5, dense=True)
    b = solve_eigen(BiharmonicProblem(mesh, method), 5, dense=False)
    assert np.all(np.diff(a) >= 0)
    assert np.abs(a - b).max() <= 1e-8 * a.max()


@pytest.mark.parametrize("method", METHODS)
def test_first_eigen_row(method):
    lev = 1 + EIGEN_LEVEL_OFFSET
    lam = solve_eigen(BiharmonicProblem(build_mesh("lshape", lev), method), 5)
    ref = np.array(EIGEN_REF[method][0])
    assert np.abs(lam - ref).max() / ref.min() <= 1e-2 or np.all(np.abs(lam / ref - 1) <= 1e-2)


def test_mixed_degenerate_pair():
    lam = solve_eigen(BiharmonicProblem(build_mesh("lshape", 3), "mixed"), 5)
    assert abs(lam[3] - lam[2]) / lam[2] <= 1e-6


class SmoothCase(ManufacturedCase):
    """u = sin(1.3 x + 0.2) cos(0.9 y - 0.1): nonzero boundary data everywhere."""

    a, b = 1.3, 0.9

    def spatial(self, x, y):
        a, b = self.a, self.b
        X, Y = a * np.asarray(x) + 0.2, b * np.asarray(y) - 0.1
        u = np.sin(X) * np.cos(Y)
        ux, uy = a * np.cos(X) * np.cos(Y), -b * np.sin(X) * np.sin(Y)
        k = a * a + b * b
        return Spatial(u, np.stack([ux, uy], -1),
                       np.stack([-a * a * u, -a * b * np.cos(X) * np.sin(Y), -b * b * u], -1),
                       np.stack([-k * ux, -k * uy], -1), k * k * u)


def test_mixed_rates_with_smooth_boundary_data():
    # inhomogeneous tangential-normal and Div-normal data on every boundary edge
    errs = [solve_source(BiharmonicProblem(build_mesh("lshape", lev), "mixed",
                                           BiharmonicData(SmoothCase()))).errors
            for lev in (2, 3, 4)]
    rs = math.log2(errs[1]["sigma"] / errs[2]["sigma"])
    ru = math.log2(errs[1]["u"] / errs[2]["u"])
    assert rs > 3.9 and ru > 1.95
