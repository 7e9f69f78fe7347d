"""Scalar polynomial bases written in barycentric coordinates.

A basis is a coefficient matrix over barycentric monomials.  Tabulation
accepts barycentric points of any leading shape, so edge points, volume
points and per-element point sets all go through the same code path.
"""
from __future__ import annotations

from itertools import product
from math import factorial

import numpy as np

Poly = dict  # {(a0, a1, a2): coef}


def pmul(p: Poly, q: Poly) -> Poly:
    out: Poly = {}
    for ea, ca in p.items():
        for eb, cb in q.items():
            e = (ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2])
            out[e] = out.get(e, 0.0) + ca * cb
    return out


def padd(p: Poly, q: Poly, alpha: float = 1.0) -> Poly:
    out = dict(p)
    for e, c in q.items():
        out[e] = out.get(e, 0.0) + alpha * c
    return out


def lam(i: int, c: float = 1.0, shift: float = 0.0) -> Poly:
    """The polynomial ``c * lambda_i + shift``."""
    e = [0, 0, 0]
    e[i] = 1
    p = {tuple(e): c}
    if shift:
        p[(0, 0, 0)] = shift
    return p


def const(c: float) -> Poly:
    return {(0, 0, 0): c}


class BaryBasis:
    """A finite list of polynomials in (lambda_0, lambda_1, lambda_2)."""

    def __init__(self, polys: list[Poly]):
        exps = sorted({e for p in polys for e in p})
        self.exps = np.array(exps, dtype=np.int64).reshape(-1, 3)
        index = {e: i for i, e in enumerate(exps)}
        coef = np.zeros((len(polys), len(exps)))
        for f, p in enumerate(polys):
            for e, c in p.items():
                coef[f, index[e]] += c
        self.coef = coef
        self.degree = int(self.exps.sum(axis=1).max()) if len(exps) else 0

    def __len__(self) -> int:
        return self.coef.shape[0]

    def _monomials(self, bary: np.ndarray, nderiv: int):
        deg = self.degree
        lam_ = np.asarray(bary, dtype=float)
        # pw[..., a, j] = lambda_a ** j
        pw = lam_[..., :, None] ** np.arange(deg + 1)
        ex = self.exps  # (m, 3)
        sel = [pw[..., a, :][..., ex[:, a]] for a in range(3)]  # each (..., m)
        val = sel[0] * sel[1] * sel[2]
        if nderiv == 0:
            return val, None, None

        def lower(a, k):
            j = np.clip(ex[:, a] - k, 0, None)
            fac = np.ones(len(ex))
            for r in range(k):
                fac = fac * np.clip(ex[:, a] - r, 0, None)
            return pw[..., a, :][..., j] * fac

        d1 = []
        for a in range(3):
            terms = [lower(b, 1) if b == a else sel[b] for b in range(3)]
            d1.append(terms[0] * terms[1] * terms[2])
        d1 = np.stack(d1, axis=-1)  # (..., m, 3)
        if nderiv == 1:
            return val, d1, None
        d2 = np.empty(val.shape + (3, 3))
        for a in range(3):
            for b in range(a, 3):
                terms = []
                for c in range(3):
                    k = (c == a) + (c == b)
                    terms.append(lower(c, k) if k else sel[c])
                d2[..., a, b] = terms[0] * terms[1] * terms[2]
                d2[..., b, a] = d2[..., a, b]
        return val, d1, d2

    def tabulate(self, bary: np.ndarray, nderiv: int = 0):
        """Values and barycentric derivatives.

        Returns ``val (..., nf)``, ``d1 (..., nf, 3)``, ``d2 (..., nf, 3, 3)``
        (the latter two only when requested).
        """
        val, d1, d2 = self._monomials(bary, nderiv)
        C = self.coef
        out_v = val @ C.T
        if nderiv == 0:
            return out_v
        out_d1 = np.einsum("...ma,fm->...fa", d1, C)
        if nderiv == 1:
            return out_v, out_d1
        out_d2 = np.einsum("...mab,fm->...fab", d2, C)
        return out_v, out_d1, out_d2


def lagrange_p3() -> tuple[BaryBasis, list[tuple]]:
    """Cubic Lagrange basis with node labels.

    Order: the three vertices, then for each ordered pair (i, j) with
    i != j the edge node next to vertex i on edge {i, j}, then the centroid.
    """
    polys, labels = [], []
    for i in range(3):
        p = pmul(lam(i), pmul(lam(i, 3.0, -1.0), lam(i, 3.0, -2.0)))
        polys.append({e: 0.5 * c for e, c in p.items()})
        labels.append(("v", i))
    for i, j in product(range(3), range(3)):
        if i == j:
            continue
        p = pmul(pmul(lam(i), lam(j)), lam(i, 3.0, -1.0))
        polys.append({e: 4.5 * c for e, c in p.items()})
        labels.append(("e", i, j))
    polys.append({(1, 1, 1): 27.0})
    labels.append(("c",))
    return BaryBasis(polys), labels


def bernstein(deg: int) -> tuple[BaryBasis, list[tuple[int, int, int]]]:
    exps = [(a, b, deg - a - b) for a in range(deg, -1, -1) for b in range(deg - a, -1, -1)]
    polys = [{e: factorial(deg) / (factorial(e[0]) * factorial(e[1]) * factorial(e[2]))}
             for e in exps]
    return BaryBasis(polys), exps


def to_physical(d1: np.ndarray, d2: np.ndarray | None, grads: np.ndarray):
    """Chain rule from barycentric to Cartesian derivatives.

    ``grads`` has shape (nT, 3, 2); ``d1`` and ``d2`` carry the element
    axis first.
    """
    g = np.einsum("k...a,kad->k...d", d1, grads)
    if d2 is None:
        return g, None
    H = np.einsum("k...ab,kad,kbe->k...de", d2, grads, grads)
    return g, H
