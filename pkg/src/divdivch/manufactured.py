"""Closed-form solutions and the data they induce.

Every case is separable, ``u(x, y, t) = T(t) phi(x, y)``, and supplies the
spatial derivatives of ``phi`` up to the gradient of the Laplacian and the
bilaplacian.  From these the model data follow:

    g     = u_t + lap^2 u - lap f(u) / eps^2
    g_a   = du/dn
    g_b   = d(lap u)/dn - (3u^2 - 1) du/dn / eps^2
    sigma = hess u - f(u) I / eps^2

with ``f(u) = u^3 - u``.  Tensors are returned as (xx, xy, yy).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def f(u):
    return u ** 3 - u


def df(u):
    return 3.0 * u ** 2 - 1.0


@dataclass(frozen=True)
class Spatial:
    phi: np.ndarray
    grad: np.ndarray      # (..., 2)
    hess: np.ndarray      # (..., 3) as (xx, xy, yy)
    grad_lap: np.ndarray  # (..., 2)
    bilap: np.ndarray


class ManufacturedCase:
    """Separable exact solution ``u = T(t) phi(x, y)`` with interface width ``eps``."""

    name = "case"

    def __init__(self, eps: float = 1.0):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.eps = float(eps)

    # hooks -------------------------------------------------------------
    def spatial(self, x, y) -> Spatial:
        raise NotImplementedError

    def T(self, t):
        return 1.0

    def dT(self, t):
        return 0.0

    # primitives --------------------------------------------------------
    def u(self, x, y, t=0.0):
        return self.T(t) * self.spatial(x, y).phi

    def u_t(self, x, y, t=0.0):
        return self.dT(t) * self.spatial(x, y).phi

    def grad(self, x, y, t=0.0):
        return self.T(t) * self.spatial(x, y).grad

    def hess(self, x, y, t=0.0):
        return self.T(t) * self.spatial(x, y).hess

    def lap(self, x, y, t=0.0):
        h = self.hess(x, y, t)
        return h[..., 0] + h[..., 2]

    def grad_lap(self, x, y, t=0.0):
        return self.T(t) * self.spatial(x, y).grad_lap

    def bilap(self, x, y, t=0.0):
        return self.T(t) * self.spatial(x, y).bilap

    # derived data ------------------------------------------------------
    def _fields(self, x, y, t):
        s = self.spatial(x, y)
        T = self.T(t)
        return s, T * s.phi, T * s.grad, T * s.hess, T * s.grad_lap, T * s.bilap

    def lap_f(self, x, y, t=0.0):
        _, u, g, h, _, _ = self._fields(x, y, t)
        return df(u) * (h[..., 0] + h[..., 2]) + 6.0 * u * (g ** 2).sum(-1)

    def g(self, x, y, t=0.0):
        """Source term."""
        s, u, _, _, _, b = self._fields(x, y, t)
        return self.dT(t) * s.phi + b - self.lap_f(x, y, t) / self.eps ** 2

    def sigma(self, x, y, t=0.0):
        _, u, _, h, _, _ = self._fields(x, y, t)
        out = np.array(h, dtype=float, copy=True)
        fu = f(u) / self.eps ** 2
        out[..., 0] -= fu
        out[..., 2] -= fu
        return out

    def div_sigma(self, x, y, t=0.0):
        _, u, g, _, gl, _ = self._fields(x, y, t)
        return gl - (df(u) / self.eps ** 2)[..., None] * g

    def divdiv_sigma(self, x, y, t=0.0):
        """divDiv sigma = lap^2 u - lap f(u) / eps^2."""
        return self.bilap(x, y, t) - self.lap_f(x, y, t) / self.eps ** 2

    def g_a(self, x, y, n, t=0.0):
        """Normal derivative of u for normals ``n`` broadcasting against (..., 2)."""
        return (self.grad(x, y, t) * n).sum(-1)

    def g_b(self, x, y, n, t=0.0):
        return (self.div_sigma(x, y, t) * n).sum(-1)


class SquareCase(ManufacturedCase):
    """``u = exp(-t) cos(pi x) cos(pi y)`` on the unit square."""

    name = "square"
    domain = "square"

    def T(self, t):
        return np.exp(-t)

    def dT(self, t):
        return -np.exp(-t)

    def spatial(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        pi = np.pi
        cx, sx = np.cos(pi * x), np.sin(pi * x)
        cy, sy = np.cos(pi * y), np.sin(pi * y)
        phi = cx * cy
        grad = np.stack([-pi * sx * cy, -pi * cx * sy], -1)
        hess = np.stack([-pi ** 2 * phi, pi ** 2 * sx * sy, -pi ** 2 * phi], -1)
        return Spatial(phi, grad, hess, -2.0 * pi ** 2 * grad, 4.0 * pi ** 4 * phi)


# ---------------------------------------------------------------------------
# polar terms r^a cos(b theta) / r^a sin(b theta) and their derivatives
# ---------------------------------------------------------------------------

Term = tuple  # (coef, kind, a, b) with kind "C" or "S"


def _combine(terms: list[Term]) -> list[Term]:
    acc: dict = {}
    for c, k, a, b in terms:
        # keep b >= 0: cos is even, sin is odd
        if b < 0:
            b = -b
            if k == "S":
                c = -c
        if k == "S" and b == 0:
            continue
        key = (k, a, b)
        acc[key] = acc.get(key, 0.0) + c
    return [(c, k, a, b) for (k, a, b), c in acc.items() if abs(c) > 1e-14]


def _dx(terms: list[Term]) -> list[Term]:
    out = []
    for c, k, a, b in terms:
        p, q = 0.5 * (a + b), 0.5 * (a - b)
        if k == "C":
            out += [(c * p, "C", a - 1, b - 1), (c * q, "C", a - 1, b + 1)]
        else:
            out += [(c * q, "S", a - 1, b + 1), (c * p, "S", a - 1, b - 1)]
    return _combine(out)


def _dy(terms: list[Term]) -> list[Term]:
    out = []
    for c, k, a, b in terms:
        p, q = 0.5 * (a + b), 0.5 * (a - b)
        if k == "C":
            out += [(c * q, "S", a - 1, b + 1), (-c * p, "S", a - 1, b - 1)]
        else:
            out += [(c * p, "C", a - 1, b - 1), (-c * q, "C", a - 1, b + 1)]
    return _combine(out)


def _eval_terms(terms: list[Term], r, th):
    out = np.zeros_like(r)
    at0 = r == 0.0
    rs = np.where(at0, 1.0, r)
    for c, k, a, b in terms:
        trig = np.cos(b * th) if k == "C" else np.sin(b * th)
        v = c * rs ** a * trig
        # at the origin: r^a -> 0 for a > 0; singular terms report their
        # limit along the reentrant edges, which is zero for this solution
        out = out + np.where(at0, 0.0 if a != 0 else c * trig, v)
    return out


def lshape_angle(x, y):
    """Polar angle in [0, 2 pi), so the L-shape occupies [0, 3 pi / 2]."""
    th = np.arctan2(y, x)
    return np.where(th < 0.0, th + 2.0 * np.pi, th)


class LShapeCase(ManufacturedCase):
    """``u = exp(-t) r^{4/3} cos(2 theta / 3)`` on the L-shaped domain."""

    name = "lshape"
    domain = "lshape"

    def __init__(self, eps: float = 1.0):
        super().__init__(eps)
        u = [(1.0, "C", 4.0 / 3.0, 2.0 / 3.0)]
        ux, uy = _dx(u), _dy(u)
        uxx, uxy, uyy = _dx(ux), _dy(ux), _dy(uy)
        lap = _combine(uxx + uyy)
        lx, ly = _dx(lap), _dy(lap)
        bil = _combine(_dx(lx) + _dy(ly))
        self._terms = dict(phi=u, ux=ux, uy=uy, uxx=uxx, uxy=uxy, uyy=uyy,
                           lx=lx, ly=ly, bilap=bil)

    def T(self, t):
        return np.exp(-t)

    def dT(self, t):
        return -np.exp(-t)

    def spatial(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        r = np.hypot(x, y)
        th = lshape_angle(x, y)
        ev = {k: _eval_terms(v, r, th) for k, v in self._terms.items()}
        return Spatial(ev["phi"],
                       np.stack([ev["ux"], ev["uy"]], -1),
                       np.stack([ev["uxx"], ev["uxy"], ev["uyy"]], -1),
                       np.stack([ev["lx"], ev["ly"]], -1),
                       ev["bilap"])


class ConstantCase(ManufacturedCase):
    """``u = c`` everywhere; ``sigma = -f(c) I / eps^2``."""

    name = "constant"
    domain = None

    def __init__(self, c: float, eps: float = 1.0):
        super().__init__(eps)
        self.c = float(c)

    def spatial(self, x, y):
        x = np.asarray(x, float) + 0.0 * np.asarray(y, float)
        z = np.zeros_like(x)
        return Spatial(np.full_like(x, self.c), np.stack([z, z], -1),
                       np.stack([z, z, z], -1), np.stack([z, z], -1), z)


def case_square(eps: float = 1.0) -> SquareCase:
    return SquareCase(eps)


def case_lshape(eps: float = 1.0) -> LShapeCase:
    return LShapeCase(eps)


def case_constant(c: float, eps: float = 1.0) -> ConstantCase:
    return ConstantCase(c, eps)


def case_by_name(name: str, eps: float = 1.0) -> ManufacturedCase:
    if name == "square":
        return SquareCase(eps)
    if name == "lshape":
        return LShapeCase(eps)
    if name.startswith("constant"):
        _, _, c = name.partition(":")
        return ConstantCase(float(c or 0.0), eps)
    raise ValueError(f"unknown case {name!r}")


COALESCENCE = dict(eps=0.01, R0=0.19, centers=((0.3, 0.5), (0.7, 0.5)))


def coalescence_initial(eps: float = 0.01, R0: float = 0.19,
                        centers=((0.3, 0.5), (0.7, 0.5))) -> Callable:
    """Two touching drops: ``1 - sum_i tanh((|x - x_i| - R0) / (sqrt 2 eps))``."""

    def u0(x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        out = np.ones(np.broadcast(x, y).shape)
        for cx, cy in centers:
            d = np.hypot(x - cx, y - cy)
            out = out - np.tanh((d - R0) / (np.sqrt(2.0) * eps))
        return out

    return u0
