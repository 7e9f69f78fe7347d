"""Sparse operators, load vectors and saddle-point systems of the mixed scheme.

Unknowns are ordered ``(s, w, m[, scalars])``: tensor coefficients, scalar
coefficients, constraint multipliers and optional scalar multipliers.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .elements import (SigmaBaseSpace, SigmaConstraints, VSpace, _edge_points,
                       edge_physical_points, frob, sym_components)
from .manufactured import f
from .linsolve import factorize
from .mesh import TriMesh
from .quadrature import interval_rule, triangle_rule

log = logging.getLogger(__name__)

MASS_DEGREE = 6
SOURCE_DEGREE = 10
EDGE_DEGREE = 10


class ConfigurationError(ValueError):
    """Invalid user-facing parameters."""


class NumericalFailure(RuntimeError):
    """Factorization breakdown or non-finite values."""


def _local_to_global(dof_r, dof_c, local, shape) -> sp.csr_matrix:
    nr, nc = dof_r.shape[1], dof_c.shape[1]
    r = np.broadcast_to(dof_r[:, :, None], (len(dof_r), nr, nc))
    c = np.broadcast_to(dof_c[:, None, :], (len(dof_c), nr, nc))
    A = sp.coo_matrix((local.ravel(), (r.ravel(), c.ravel())), shape=shape).tocsr()
    A.sum_duplicates()
    return A


def _scatter(dofs, local, n) -> np.ndarray:
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=n)


@dataclass(eq=False)
class OperatorSet:
    """Time-independent operators of the scheme.

    ``B[i, j] = (divDiv phi_j, psi_i)`` elementwise; ``j_u[i] = (1, psi_i)``.
    """

    mesh: TriMesh
    sigma_space: SigmaBaseSpace
    v_space: VSpace
    constraints: SigmaConstraints
    M_sigma: sp.csr_matrix
    B: sp.csr_matrix
    M_u: sp.csr_matrix
    j_u: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)

    def cached(self, key, make):
        """Memoize tabulations reused by every time step."""
        if key not in self.cache:
            self.cache[key] = make()
        return self.cache[key]

    @property
    def C(self) -> sp.csr_matrix:
        return self.constraints.C

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.sigma_space.dim, self.v_space.dim, self.constraints.n_rows


def assemble_operators(mesh: TriMesh, sigma_space: SigmaBaseSpace, v_space: VSpace,
                       constraints: SigmaConstraints, degree: int = MASS_DEGREE) -> OperatorSet:
    if degree < 6:
        raise ConfigurationError("tensor mass needs a rule exact to degree 6")
    q = triangle_rule(degree)
    area = mesh.areas
    wK = 2.0 * area[:, None] * q.weights[None, :]
    tab = sigma_space.tabulate(q.points)
    T = tab.tau
    Ml = np.einsum("kq,kqic,kqjc->kij", wK, T * np.array([1.0, 2.0, 1.0]), T)
    nS, nV = sigma_space.dim, v_space.dim
    M_sigma = _local_to_global(sigma_space.dofmap, sigma_space.dofmap, Ml, (nS, nS))
    psi = v_space.tabulate(q.points)  # (nq, 3)
    Bl = np.einsum("kq,qa,kqi->kai", wK, psi, tab.divdiv)
    B = _local_to_global(v_space.dofmap, sigma_space.dofmap, Bl, (nV, nS))
    Mu_loc = area[:, None, None] * (np.ones((3, 3)) + np.eye(3))[None] / 12.0
    M_u = _local_to_global(v_space.dofmap, v_space.dofmap, Mu_loc, (nV, nV))
    j_u = np.repeat(area / 3.0, 3)
    return OperatorSet(mesh, sigma_space, v_space, constraints, M_sigma, B, M_u, j_u)


def build_operators(mesh: TriMesh) -> OperatorSet:
    """Spaces, constraints and operators in one call."""
    from .elements import build_sigma_constraints, build_sigma_space, build_v_space

    S = build_sigma_space(mesh)
    return assemble_operators(mesh, S, build_v_space(mesh), build_sigma_constraints(mesh, S))


# ---------------------------------------------------------------------------
# load vectors
# ---------------------------------------------------------------------------

def trace_load(ops: OperatorSet, values: np.ndarray, degree: int) -> np.ndarray:
    """Vector ``(v, tr phi_i)`` for ``v`` given at the points of the degree rule."""
    def make():
        q = triangle_rule(degree)
        tab = ops.sigma_space.tabulate(q.points, need="tau")
        wK = 2.0 * ops.mesh.areas[:, None] * q.weights[None, :]
        return wK[..., None] * (tab.tau[..., 0] + tab.tau[..., 2])

    wtr = ops.cached(("trace", degree), make)
    loc = np.einsum("kq,kqi->ki", values, wtr)
    return _scatter(ops.sigma_space.dofmap, loc, ops.sigma_space.dim)


def assemble_nonlinear_load(ops: OperatorSet, u_prev, eps: float,
                            degree: int = MASS_DEGREE) -> np.ndarray:
    """Entries ``-(f(u_prev), tr phi_i) / eps^2``.

    ``u_prev`` is a coefficient vector of the scalar space or a callable
    returning values at barycentric points, shape (nT, nq).
    """
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    q = triangle_rule(degree)
    if callable(u_prev):
        u = u_prev(q.points)
    else:
        u = ops.v_space.evaluate(u_prev, q.points)
    return -trace_load(ops, f(u), degree) / eps ** 2


def trace_coupling(ops: OperatorSet) -> sp.csr_matrix:
    """Matrix ``T[i, j] = (psi_j, tr phi_i)`` between the scalar and tensor spaces."""
    def make():
        q = triangle_rule(MASS_DEGREE)
        tab = ops.sigma_space.tabulate(q.points, need="tau")
        wK = 2.0 * ops.mesh.areas[:, None] * q.weights[None, :]
        psi = ops.v_space.tabulate(q.points)
        loc = np.einsum("kq,kqi,qa->kia", wK, tab.tau[..., 0] + tab.tau[..., 2], psi)
        nS, nV = ops.sigma_space.dim, ops.v_space.dim
        return _local_to_global(ops.sigma_space.dofmap, ops.v_space.dofmap, loc, (nS, nV))

    return ops.cached("trace_coupling", make)


def assemble_natural_boundary(ops: OperatorSet, g_a: Callable | None, t: float = 0.0,
                              degree: int = EDGE_DEGREE) -> np.ndarray:
    """Entries ``(n^T phi_i n, g_a)`` over the boundary.

    ``g_a(x, y, n, t)`` receives outward unit normals.
    """
    nS = ops.sigma_space.dim
    if g_a is None:
        return np.zeros(nS)
    mesh = ops.mesh

    def make():
        s, w = interval_rule(degree)
        bE = np.flatnonzero(mesh.boundary_edge)
        tri, bary = _edge_points(mesh, bE, 0, s)
        tab = ops.sigma_space.tabulate(bary, tri, need="tau")
        n = mesh.outward_edge_normals[bE]
        vals = frob(tab.tau, sym_components(n, n)[:, None, None, :])  # (nb, nq, 30)
        wv = (mesh.edge_lengths[bE][:, None] * w[None, :])[..., None] * vals
        return tri, n, edge_physical_points(mesh, bE, s), wv

    tri, n, x, wv = ops.cached(("natural", degree), make)
    ga = g_a(x[..., 0], x[..., 1], n[:, None, :], t)
    loc = np.einsum("eq,eqi->ei", ga, wv)
    return _scatter(ops.sigma_space.dofmap[tri], loc, nS)


def assemble_source(ops: OperatorSet, g: Callable | None, t: float = 0.0,
                    degree: int = SOURCE_DEGREE) -> np.ndarray:
    """Entries ``(g(., t), psi_i)``."""
    nV = ops.v_space.dim
    if g is None:
        return np.zeros(nV)
    q = triangle_rule(degree)
    x, wK = ops.cached(("volume", degree), lambda: (
        ops.mesh.to_physical(q.points), 2.0 * ops.mesh.areas[:, None] * q.weights[None, :]))
    gv = g(x[..., 0], x[..., 1], t)
    loc = np.einsum("kq,kq,qa->ka", wK, gv, ops.v_space.tabulate(q.points))
    return loc.ravel()


def l2_project_v(ops: OperatorSet, fn: Callable, degree: int = 12) -> np.ndarray:
    """Elementwise L2 projection of ``fn(x, y)`` into the scalar space."""
    q = triangle_rule(degree)
    x = ops.mesh.to_physical(q.points)
    vals = fn(x[..., 0], x[..., 1])
    psi = ops.v_space.tabulate(q.points)
    rhs = np.einsum("q,kq,qa->ka", q.weights, vals, psi)
    Mloc = (np.ones((3, 3)) + np.eye(3)) / 24.0  # reference mass, area 1/2
    return np.linalg.solve(Mloc, rhs.T).T.ravel()


# ---------------------------------------------------------------------------
# saddle-point systems
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SparseSystem:
    """Symmetric indefinite matrix with a block layout and a cached factorization."""

    matrix: sp.csc_matrix
    layout: dict
    _lu: object = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def factor(self):
        if self._lu is None:
            try:
                self._lu = factorize(self.matrix)
            except RuntimeError as exc:
                raise NumericalFailure(f"factorization failed: {exc}") from exc
        return self._lu

    def solve(self, rhs: np.ndarray, refine: int = 2) -> np.ndarray:
        """Direct solve followed by ``refine`` steps of iterative refinement."""
        lu = self.factor()
        x = lu.solve(rhs)
        for _ in range(refine):
            x = x + lu.solve(rhs - self.matrix @ x)
        if not np.all(np.isfinite(x)):
            raise NumericalFailure("non-finite solution")
        return x

    def split(self, x: np.ndarray) -> dict:
        return {k: x[v] for k, v in self.layout.items()}

    def residual(self, x, rhs) -> float:
        r = self.matrix @ x - rhs
        return float(np.linalg.norm(r) / max(np.linalg.norm(rhs), 1e-300))


def _layout(*sizes_named) -> dict:
    out, o = {}, 0
    for name, n in sizes_named:
        out[name] = slice(o, o + n)
        o += n
    return out


def build_step_system(ops: OperatorSet, tau_step: float, stab: float = 0.0) -> SparseSystem:
    """``[[M, -B^T + stab T, C^T], [-B, -M_u / tau, 0], [C, 0, 0]]``.

    ``stab`` is the coefficient of an optional linear stabilization
    ``(u^n - u^{n-1}, tr tau)``; zero gives the plain lagged scheme.
    """
    if tau_step <= 0:
        raise ConfigurationError("time step must be positive")
    nS, nV, nC = ops.sizes
    top = -ops.B.T
    if stab:
        top = top + stab * trace_coupling(ops)
    A = sp.bmat([[ops.M_sigma, top, ops.C.T],
                 [-ops.B, -ops.M_u / tau_step, None],
                 [ops.C, None, None]], format="csc")
    return SparseSystem(A, _layout(("s", nS), ("w", nV), ("m", nC)))


def step_rhs(ops: OperatorSet, tau_step: float, w_prev: np.ndarray, sigma_load: np.ndarray,
             source: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Right side ``[sigma_load; -M_u w_prev / tau - source; d]``."""
    return np.concatenate([sigma_load, -(ops.M_u @ w_prev) / tau_step - source, d])


def build_static_system(ops: OperatorSet) -> SparseSystem:
    """Steady mixed system with the mean of ``w`` fixed by a scalar multiplier.

    ``[[M, -B^T, C^T, 0], [-B, 0, 0, j], [C, 0, 0, 0], [0, j^T, 0, 0]]``.
    The multiplier on ``j`` absorbs the compatibility defect of the
    constant test function, so the system is solvable for any data.
    """
    nS, nV, nC = ops.sizes
    j = sp.csr_matrix(ops.j_u[:, None])
    A = sp.bmat([[ops.M_sigma, -ops.B.T, ops.C.T, None],
                 [-ops.B, None, None, j],
                 [ops.C, None, None, None],
                 [None, j.T, None, None]], format="csc")
    return SparseSystem(A, _layout(("s", nS), ("w", nV), ("m", nC), ("lam", 1)))
