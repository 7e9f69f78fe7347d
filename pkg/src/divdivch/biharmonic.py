"""Steady biharmonic problem and its eigenvalues by three discretizations.

The boundary conditions are those inherited from the phase-field model:
``du/dn = g1`` and ``d(lap u)/dn = g2``.  Methods:

* ``mixed``: the divDiv-conforming tensor / piecewise linear pair;
* ``morley``: the nonconforming quadratic plate element;
* ``cr``: continuous linears for ``u`` and ``lap u`` (Ciarlet-Raviart).

In every method ``u`` is fixed up to a constant by matching its mean.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (NumericalFailure, OperatorSet, SparseSystem, assemble_natural_boundary,
                       assemble_source, build_operators, build_static_system)
from .ch_solver import exact_mean
from .elements import (MorleySpace, _edge_points, build_morley_space, edge_physical_points,
                       frob)
from .manufactured import ManufacturedCase, case_lshape
from .linsolve import factorize
from .mesh import TriMesh, build_mesh
from .quadrature import interval_rule, triangle_rule

log = logging.getLogger(__name__)

METHODS = ("mixed", "morley", "cr")
EIG_SHIFT = 1.0
ZERO_TOL = 1e-6


class BiharmonicData:
    """View of a manufactured case for ``lap^2 u = g`` at a fixed time (no double well)."""

    def __init__(self, case: ManufacturedCase, t: float = 0.0):
        self.case = case
        self.t0 = t

    def u(self, x, y, t=None):
        return self.case.u(x, y, self.t0)

    def sigma(self, x, y, t=None):
        return self.case.hess(x, y, self.t0)

    def div_sigma(self, x, y, t=None):
        return self.case.grad_lap(x, y, self.t0)

    def divdiv_sigma(self, x, y, t=None):
        return self.case.bilap(x, y, self.t0)

    g = divdiv_sigma

    def lap(self, x, y, t=None):
        return self.case.lap(x, y, self.t0)

    def g_a(self, x, y, n, t=None):
        return (self.case.grad(x, y, self.t0) * n).sum(-1)

    def g_b(self, x, y, n, t=None):
        return (self.case.grad_lap(x, y, self.t0) * n).sum(-1)


@dataclass
class BiharmonicProblem:
    mesh: TriMesh
    method: str
    data: BiharmonicData | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")


@dataclass
class SourceResult:
    sigma: np.ndarray
    u: np.ndarray
    errors: dict
    residual: float


def _vol(mesh: TriMesh, degree: int):
    q = triangle_rule(degree)
    return q, mesh.to_physical(q.points), 2.0 * mesh.areas[:, None] * q.weights[None, :]


# ---------------------------------------------------------------------------
# mixed method
# ---------------------------------------------------------------------------

def _mixed_source(mesh: TriMesh, data: BiharmonicData, ops: OperatorSet | None = None) -> SourceResult:
    from .verify import error_norms

    ops = ops or build_operators(mesh)
    A = build_static_system(ops)
    rhs = np.concatenate([assemble_natural_boundary(ops, data.g_a),
                          -assemble_source(ops, data.g),
                          ops.constraints.data(data),
                          [exact_mean(ops, data.u)]])
    x = A.solve(rhs)
    res = A.residual(x, rhs)
    p = A.split(x)

    errs = error_norms(data, ops, SimpleNamespace(s=p["s"], w=p["w"]), 0.0)
    return SourceResult(p["s"], p["w"], errs, res)


def mixed_operator(ops: OperatorSet, shift: float):
    """Factorized ``[[M, -B^T, C^T], [-B, shift M_u, 0], [C, 0, 0]]``."""
    A = sp.bmat([[ops.M_sigma, -ops.B.T, ops.C.T],
                 [-ops.B, shift * ops.M_u, None],
                 [ops.C, None, None]], format="csc")
    nS, nV, nC = ops.sizes
    return SparseSystem(A, {"s": slice(0, nS), "w": slice(nS, nS + nV), "m": slice(nS + nV, None)})


def _mixed_eigen(mesh: TriMesh, count: int, dense: bool) -> np.ndarray:
    ops = build_operators(mesh)
    nS, nV, nC = ops.sizes
    # the scalar mass is block diagonal: M_u = L L^T elementwise
    Lloc = np.linalg.cholesky((np.ones((3, 3)) + np.eye(3)) / 12.0)
    L = sp.block_diag([math.sqrt(a) * Lloc for a in ops.mesh.areas], format="csr")
    if dense:
        # A = B s(w) where s solves the constrained tensor mass problem
        Kp = sp.bmat([[ops.M_sigma, ops.C.T], [ops.C, None]], format="csc")
        lu = factorize(Kp)
        rhs = np.vstack([ops.B.T.toarray(), np.zeros((nC, nV))])
        sol = lu.solve(rhs)[:nS]
        Aw = ops.B @ sol
        Aw = 0.5 * (Aw + Aw.T)
        lam = sla.eigh(Aw, ops.M_u.toarray(), eigvals_only=True)
    else:
        K = mixed_operator(ops, EIG_SHIFT)
        K.factor()
        Lt = L.T.tocsr()

        def op(y):
            r = np.zeros(K.n)
            r[nS:nS + nV] = L @ y
            return -(Lt @ K.solve(r)[nS:nS + nV])

        Op = spla.LinearOperator((nV, nV), matvec=op, dtype=float)
        nu = spla.eigsh(Op, k=count + 3, which="LA", return_eigenvectors=False, tol=1e-12)
        lam = EIG_SHIFT + 1.0 / nu
    return _clean(lam, count)


def _clean(lam: np.ndarray, count: int) -> np.ndarray:
    lam = np.sort(np.real(lam))
    lam = lam[np.abs(lam) >= ZERO_TOL]
    if len(lam) < count:
        raise NumericalFailure(f"eigensolver returned {len(lam)} nonzero values, wanted {count}")
    return lam[:count]


# ---------------------------------------------------------------------------
# Morley
# ---------------------------------------------------------------------------

def _morley_matrices(sp_: MorleySpace, degree: int = 4):
    mesh = sp_.mesh
    q, x, wK = _vol(mesh, degree)
    v, g, H = sp_.tabulate(q.points, 2)
    Hc = np.stack([H[..., 0, 0], H[..., 0, 1], H[..., 1, 1]], -1)
    Kl = np.einsum("kq,kqac,kqbc->kab", wK, Hc * np.array([1.0, 2.0, 1.0]), Hc)
    Ml = np.einsum("kq,kqa,kqb->kab", wK, v, v)
    n = sp_.dim
    r = np.broadcast_to(sp_.dofmap[:, :, None], Kl.shape).ravel()
    c = np.broadcast_to(sp_.dofmap[:, None, :], Kl.shape).ravel()
    K = sp.csr_matrix((Kl.ravel(), (r, c)), shape=(n, n))
    M = sp.csr_matrix((Ml.ravel(), (r, c)), shape=(n, n))
    jv = np.bincount(sp_.dofmap.ravel(), np.einsum("kq,kqa->ka", wK, v).ravel(), minlength=n)
    return K, M, jv


def _morley_boundary(sp_: MorleySpace):
    mesh = sp_.mesh
    bE = np.flatnonzero(mesh.boundary_edge)
    fixed = mesh.n_vertices + bE
    return bE, fixed


def _morley_source(mesh: TriMesh, data: BiharmonicData) -> SourceResult:
    S = build_morley_space(mesh)
    K, M, jv = _morley_matrices(S)
    n = S.dim
    # volume load (g, v)
    q, x, wK = _vol(mesh, 10)
    v = S.tabulate(q.points, 0)
    gv = data.g(x[..., 0], x[..., 1])
    b = np.bincount(S.dofmap.ravel(), np.einsum("kq,kq,kqa->ka", wK, gv, v).ravel(), minlength=n)
    # boundary terms: + <hess u n, grad v> - <g2, v>
    s, w = interval_rule(10)
    bE, fixed = _morley_boundary(S)
    tri, bary = _edge_points(mesh, bE, 0, s)
    vv, gg, _ = _tab_at(S, tri, bary)
    nout = mesh.outward_edge_normals[bE]
    xe = edge_physical_points(mesh, bE, s)
    Hu = data.sigma(xe[..., 0], xe[..., 1])
    Hn = np.stack([Hu[..., 0] * nout[:, None, 0] + Hu[..., 1] * nout[:, None, 1],
                   Hu[..., 1] * nout[:, None, 0] + Hu[..., 2] * nout[:, None, 1]], -1)
    g2 = data.g_b(xe[..., 0], xe[..., 1], nout[:, None, :])
    he = mesh.edge_lengths[bE]
    loc = np.einsum("e,q,eqd,eqad->ea", he, w, Hn, gg) - np.einsum("e,q,eq,eqa->ea", he, w, g2, vv)
    b += np.bincount(S.dofmap[tri].ravel(), loc.ravel(), minlength=n)
    # essential normal-derivative dofs: edge means of du/dn_e
    ne = mesh.edge_normals[bE]
    g1 = data.g_a(xe[..., 0], xe[..., 1], ne[:, None, :])
    u = np.zeros(n)
    u[fixed] = g1 @ w
    free = np.setdiff1d(np.arange(n), fixed)
    Kff = K[free][:, free]
    rhs = b[free] - K[free][:, fixed] @ u[fixed]
    # mean condition through a bordered system
    A = sp.bmat([[Kff, sp.csr_matrix(jv[free][:, None])],
                 [sp.csr_matrix(jv[free][None, :]), None]], format="csc")
    target = exact_mean_mesh(mesh, data.u) - jv[fixed] @ u[fixed]
    rr = np.concatenate([rhs, [target]])
    sol = factorize(A).solve(rr)
    res = float(np.linalg.norm(A @ sol - rr) / max(np.linalg.norm(rr), 1e-300))
    u[free] = sol[:-1]
    errs = morley_errors(S, u, data)
    return SourceResult(None, u, errs, res)


def _tab_at(S: MorleySpace, tri: np.ndarray, bary: np.ndarray):
    """Morley values and gradients at per-edge barycentric points on triangles ``tri``."""
    v, d1 = S.basis.tabulate(bary, 1)
    G = S.mesh.barycentric_gradients()[tri]
    g = np.einsum("eqba,ead->eqbd", d1, G)
    C = S.coef[tri]
    return (np.einsum("eqb,efb->eqf", v, C), np.einsum("eqbd,efb->eqfd", g, C), None)


def exact_mean_mesh(mesh: TriMesh, fn) -> float:
    q, x, wK = _vol(mesh, 12)
    return float((wK * fn(x[..., 0], x[..., 1])).sum())


def morley_errors(S: MorleySpace, u: np.ndarray, data: BiharmonicData) -> dict:
    q, x, wK = _vol(S.mesh, 12)
    v, g, H = S.tabulate(q.points, 2)
    c = u[S.dofmap]
    uh = np.einsum("kqa,ka->kq", v, c)
    Hh = np.einsum("kqade,ka->kqde", H, c)
    Hh = np.stack([Hh[..., 0, 0], Hh[..., 0, 1], Hh[..., 1, 1]], -1)
    dH = data.sigma(x[..., 0], x[..., 1]) - Hh
    du = data.u(x[..., 0], x[..., 1]) - uh
    return {"sigma": math.sqrt(float((wK * frob(dH, dH)).sum())),
            "u": math.sqrt(float((wK * du ** 2).sum()))}


def _morley_eigen(mesh: TriMesh, count: int, dense: bool) -> np.ndarray:
    S = build_morley_space(mesh)
    K, M, _ = _morley_matrices(S)
    _, fixed = _morley_boundary(S)
    free = np.setdiff1d(np.arange(S.dim), fixed)
    K = K[free][:, free].tocsc()
    M = M[free][:, free].tocsc()
    if dense:
        lam = sla.eigh(K.toarray(), M.toarray(), eigvals_only=True)
    else:
        lam = _shift_invert(K, M, count)
    return _clean(lam, count)


def _shift_invert(K: sp.spmatrix, M: sp.spmatrix, count: int) -> np.ndarray:
    """Eigenvalues of ``K x = lam M x`` nearest the shift, for sparse SPD ``M``."""
    lu = factorize((K - EIG_SHIFT * M).tocsc())
    OPinv = spla.LinearOperator(K.shape, matvec=lu.solve, dtype=float)
    return spla.eigsh(K, k=count + 3, M=M, sigma=EIG_SHIFT, which="LM", OPinv=OPinv,
                      return_eigenvectors=False, tol=1e-12)


# ---------------------------------------------------------------------------
# Ciarlet-Raviart
# ---------------------------------------------------------------------------

def p1_matrices(mesh: TriMesh):
    """Consistent mass and stiffness of continuous linears."""
    A = mesh.areas
    G = mesh.barycentric_gradients()
    Kl = A[:, None, None] * np.einsum("kad,kbd->kab", G, G)
    Ml = A[:, None, None] * (np.ones((3, 3)) + np.eye(3))[None] / 12.0
    n = mesh.n_vertices
    r = np.broadcast_to(mesh.triangles[:, :, None], Kl.shape).ravel()
    c = np.broadcast_to(mesh.triangles[:, None, :], Kl.shape).ravel()
    return (sp.csr_matrix((Kl.ravel(), (r, c)), shape=(n, n)),
            sp.csr_matrix((Ml.ravel(), (r, c)), shape=(n, n)))


def _p1_boundary_load(mesh: TriMesh, fn) -> np.ndarray:
    s, w = interval_rule(10)
    bE = np.flatnonzero(mesh.boundary_edge)
    xe = edge_physical_points(mesh, bE, s)
    nout = mesh.outward_edge_normals[bE]
    vals = fn(xe[..., 0], xe[..., 1], nout[:, None, :])
    he = mesh.edge_lengths[bE]
    lo = np.einsum("e,q,eq->e", he, w * (1 - s), vals)
    hi = np.einsum("e,q,eq->e", he, w * s, vals)
    n = mesh.n_vertices
    return (np.bincount(mesh.edges[bE, 0], lo, minlength=n)
            + np.bincount(mesh.edges[bE, 1], hi, minlength=n))


def _cr_source(mesh: TriMesh, data: BiharmonicData) -> SourceResult:
    K, M = p1_matrices(mesh)
    n = mesh.n_vertices
    q, x, wK = _vol(mesh, 10)
    gv = data.g(x[..., 0], x[..., 1])
    gl = np.einsum("kq,kq,qa->ka", wK, gv, q.points)
    G = np.bincount(mesh.triangles.ravel(), gl.ravel(), minlength=n)
    j = np.asarray(M.sum(axis=0)).ravel()
    b1 = _p1_boundary_load(mesh, data.g_a)
    b2 = -G + _p1_boundary_load(mesh, data.g_b)
    A = sp.bmat([[M, K, None], [K, None, sp.csr_matrix(j[:, None])],
                 [None, sp.csr_matrix(j[None, :]), None]], format="csc")
    rhs = np.concatenate([b1, b2, [exact_mean_mesh(mesh, data.u)]])
    sol = factorize(A).solve(rhs)
    res = float(np.linalg.norm(A @ sol - rhs) / np.linalg.norm(rhs))
    sig, u = sol[:n], sol[n:2 * n]
    # errors: sigma against lap u
    q, x, wK = _vol(mesh, 12)
    sh = sig[mesh.triangles] @ q.points.T
    uh = u[mesh.triangles] @ q.points.T
    ds = data.lap(x[..., 0], x[..., 1]) - sh
    du = data.u(x[..., 0], x[..., 1]) - uh
    errs = {"sigma": math.sqrt(float((wK * ds ** 2).sum())),
            "u": math.sqrt(float((wK * du ** 2).sum()))}
    return SourceResult(sig, u, errs, res)


def _cr_eigen(mesh: TriMesh, count: int, dense: bool) -> np.ndarray:
    """Pencil ``K M^{-1} K u = lam M u`` of the two coupled linear forms."""
    K, M = p1_matrices(mesh)
    if dense:
        Kd, Md = K.toarray(), M.toarray()
        A = Kd @ sla.solve(Md, Kd, assume_a="pos")
        lam = sla.eigh(0.5 * (A + A.T), Md, eigvals_only=True)
        return _clean(lam, count)
    n = mesh.n_vertices
    # (K M^{-1} K - s M)^{-1} b is the second block of [[M, -K], [-K, s M]]^{-1} [0; -b]
    lu = factorize(sp.bmat([[M, -K], [-K, EIG_SHIFT * M]], format="csc"))

    def opinv(b):
        return lu.solve(np.concatenate([np.zeros(n), -b]))[n:]

    Mlu = factorize(M.tocsc())

    def amul(x):
        return K @ Mlu.solve(K @ x)

    A = spla.LinearOperator((n, n), matvec=amul, dtype=float)
    OPinv = spla.LinearOperator((n, n), matvec=opinv, dtype=float)
    lam = spla.eigsh(A, k=count + 3, M=M, sigma=EIG_SHIFT, which="LM", OPinv=OPinv,
                     return_eigenvectors=False, tol=1e-12)
    return _clean(lam, count)


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------

def solve_source(problem: BiharmonicProblem) -> SourceResult:
    data = problem.data or BiharmonicData(case_lshape())
    fn = {"mixed": _mixed_source, "morley": _morley_source, "cr": _cr_source}[problem.method]
    return fn(problem.mesh, data)


def solve_eigen(problem: BiharmonicProblem, count: int = 5, dense: bool | None = None) -> np.ndarray:
    """Smallest ``count`` nonzero eigenvalues with natural boundary conditions, ascending."""
    if dense is None:
        dense = problem.mesh.n_triangles <= 96
    fn = {"mixed": _mixed_eigen, "morley": _morley_eigen, "cr": _cr_eigen}[problem.method]
    return fn(problem.mesh, count, dense)


def table5(levels=range(1, 7)) -> dict:
    out = {m: [] for m in METHODS}
    for lev in levels:
        mesh = build_mesh("lshape", lev)
        for m in METHODS:
            out[m].append(solve_source(BiharmonicProblem(mesh, m)).errors)
    return out


def table6(levels=range(3, 7), count: int = 5, dense: bool | None = None) -> dict:
    """Eigenvalues per method and level.

    The coarse levels are too crude to resolve the low modes, so the
    default sweep starts at level 3 (two red refinements of the base mesh).
    """
    out = {m: [] for m in METHODS}
    for lev in levels:
        mesh = build_mesh("lshape", lev)
        for m in METHODS:
            out[m].append(solve_eigen(BiharmonicProblem(mesh, m), count, dense))
    return out
