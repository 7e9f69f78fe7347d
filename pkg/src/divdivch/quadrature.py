"""Quadrature on the reference triangle and the unit interval."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@dataclass(frozen=True)
class SimplexQuadrature:
    """Rule on the reference triangle (0,0), (1,0), (0,1).

    ``points`` holds barycentric coordinates, ``weights`` sum to the
    reference area 1/2.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> SimplexQuadrature:
    """Collapsed Gauss-Jacobi x Gauss-Legendre rule, exact to ``degree``.

    All points are strictly inside the triangle and all weights are positive.
    """
    n = max(1, (degree + 2) // 2)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xl, wl = roots_legendre(n)
    a = 0.5 * (xj + 1.0)
    wa = 0.25 * wj
    b = 0.5 * (xl + 1.0)
    wb = 0.5 * wl
    A, Bv = np.meshgrid(a, b, indexing="ij")
    x = A.ravel()
    y = (Bv * (1.0 - A)).ravel()
    w = np.outer(wa, wb).ravel()
    bary = np.stack([1.0 - x - y, x, y], axis=1)
    bary.setflags(write=False)
    w.setflags(write=False)
    return SimplexQuadrature(bary, w, degree)


@lru_cache(maxsize=None)
def interval_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1]."""
    n = max(1, (degree + 2) // 2)
    x, w = roots_legendre(n)
    s = 0.5 * (x + 1.0)
    w = 0.5 * w
    s.setflags(write=False)
    w.setflags(write=False)
    return s, w


def legendre_on_unit(deg: int, s: np.ndarray) -> np.ndarray:
    """Legendre polynomials on [0,1], orthonormal for ds; shape (..., deg+1)."""
    x = 2.0 * np.asarray(s) - 1.0
    out = [np.ones_like(x), x]
    for k in range(1, deg):
        out.append(((2 * k + 1) * x * out[k] - k * out[k - 1]) / (k + 1))
    out = out[: deg + 1]
    return np.stack([np.sqrt(2 * k + 1) * p for k, p in enumerate(out)], axis=-1)


def monomial_integral(i: int, j: int) -> float:
    """Exact integral of x^i y^j over the reference triangle."""
    from math import factorial

    return factorial(i) * factorial(j) / factorial(i + j + 2)
