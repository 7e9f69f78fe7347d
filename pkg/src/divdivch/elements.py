"""Discrete spaces on a :class:`~divdivch.mesh.TriMesh`.

The symmetric-tensor space is the H(div)-conforming cubic space built from
a continuous cubic part plus element bubbles with vanishing normal trace.
A non-redundant basis is used:

* per vertex, the three components of the continuous field;
* per edge and per edge node, the ``nn`` and ``nt`` components of the
  continuous field in the edge frame;
* per triangle, nine bubbles ``lambda_i lambda_j lambda_m t_ij t_ij^T``.

The tangential-tangential edge components and the cell-interior components
of the continuous field lie in the span of the bubbles, so they are not
separate unknowns.  The divDiv-conforming subspace is the kernel of the
constraint matrix built by :func:`build_sigma_constraints`.

Tensor components are stored in the order (xx, xy, yy).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .mesh import TriMesh, LOCAL_EDGES
from .poly import BaryBasis, bernstein, lagrange_p3, to_physical
from .quadrature import interval_rule, legendre_on_unit

log = logging.getLogger(__name__)

N_LOCAL = 30
N_BUBBLE = 9
# (xx, xy, yy) basis matrices of the symmetric 2x2 tensors
_SYM = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def sym_components(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(xx, xy, yy) components of ``a b^T + b a^T`` halved, i.e. sym(a b^T)."""
    return np.stack([a[..., 0] * b[..., 0],
                     0.5 * (a[..., 0] * b[..., 1] + a[..., 1] * b[..., 0]),
                     a[..., 1] * b[..., 1]], axis=-1)


def frob(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Frobenius product of tensors stored as (xx, xy, yy)."""
    return a[..., 0] * b[..., 0] + 2.0 * a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


class SigmaTab(NamedTuple):
    tau: np.ndarray      # (n, nq, 30, 3)
    div: np.ndarray      # (n, nq, 30, 2)
    divdiv: np.ndarray   # (n, nq, 30)


def _scalar_basis() -> tuple[BaryBasis, dict]:
    lag, labels = lagrange_p3()
    polys = []
    # rebuild a single basis holding the Lagrange functions and the bubbles
    for f in range(len(lag)):
        polys.append({tuple(e): c for e, c in zip(lag.exps.tolist(), lag.coef[f]) if c != 0.0})
    index = {lab: i for i, lab in enumerate(labels)}
    bub = {}
    for k, (i, j) in enumerate(LOCAL_EDGES.tolist()):
        for m in range(3):
            e = [1 if a in (i, j) else 0 for a in range(3)]
            e[m] += 1
            bub[(k, m)] = len(polys)
            polys.append({tuple(e): 1.0})
    index["bubble"] = bub
    return BaryBasis(polys), index


_SCALAR, _SINDEX = _scalar_basis()


@dataclass(frozen=True, eq=False)
class SigmaBaseSpace:
    """Cubic H(div)-conforming symmetric tensors (continuous part + bubbles)."""

    mesh: TriMesh
    dofmap: np.ndarray       # (nT, 30) global dof per local function
    scalar_index: np.ndarray  # (nT, 30) which scalar shape function
    matrices: np.ndarray     # (nT, 30, 3) constant tensor factor
    grads: np.ndarray        # (nT, 3, 2) barycentric gradients
    degree: int = 3

    @property
    def dim(self) -> int:
        m = self.mesh
        return 3 * m.n_vertices + 4 * m.n_edges + N_BUBBLE * m.n_triangles

    @property
    def n_vertex_dofs(self) -> int:
        return 3 * self.mesh.n_vertices

    @property
    def n_edge_dofs(self) -> int:
        return 4 * self.mesh.n_edges

    def bubble_dofs(self) -> np.ndarray:
        start = self.n_vertex_dofs + self.n_edge_dofs
        return np.arange(start, self.dim)

    def tabulate(self, bary: np.ndarray, tri: np.ndarray | None = None,
                 need: str = "all") -> SigmaTab:
        """Evaluate every local basis function of the selected triangles.

        ``bary`` is either shared points ``(nq, 3)`` or per-triangle points
        ``(n, nq, 3)``.  ``need`` is ``"all"`` or ``"tau"``.
        """
        tri = np.arange(self.mesh.n_triangles) if tri is None else np.asarray(tri)
        G = self.grads[tri]
        sidx = self.scalar_index[tri]
        mats = self.matrices[tri]
        shared = bary.ndim == 2
        nderiv = 0 if need == "tau" else 2
        out = _SCALAR.tabulate(bary, nderiv)
        val = out if nderiv == 0 else out[0]
        if shared:
            val = np.broadcast_to(val, (len(tri),) + val.shape)
        v = np.take_along_axis(val, sidx[:, None, :], axis=2)  # (n, nq, 30)
        tau = v[..., None] * mats[:, None, :, :]
        if nderiv == 0:
            return SigmaTab(tau, None, None)
        d1, d2 = out[1], out[2]
        if shared:
            d1 = np.broadcast_to(d1, (len(tri),) + d1.shape)
            d2 = np.broadcast_to(d2, (len(tri),) + d2.shape)
        g, H = to_physical(d1, d2, G)  # (n, nq, 19, 2), (n, nq, 19, 2, 2)
        g = np.take_along_axis(g, sidx[:, None, :, None], axis=2)
        H = np.take_along_axis(H, sidx[:, None, :, None, None], axis=2)
        m11 = mats[:, None, :, 0]
        m12 = mats[:, None, :, 1]
        m22 = mats[:, None, :, 2]
        div = np.stack([m11 * g[..., 0] + m12 * g[..., 1],
                        m12 * g[..., 0] + m22 * g[..., 1]], axis=-1)
        dd = m11 * H[..., 0, 0] + 2.0 * m12 * H[..., 0, 1] + m22 * H[..., 1, 1]
        return SigmaTab(tau, div, dd)

    def local_coefficients(self, s: np.ndarray, tri=None) -> np.ndarray:
        tri = slice(None) if tri is None else tri
        return np.asarray(s)[self.dofmap[tri]]

    def evaluate(self, s: np.ndarray, bary: np.ndarray, tri=None, chunk: int = 4096):
        """Field values (tau, Div tau, divDiv tau) of coefficient vector ``s``."""
        tri = np.arange(self.mesh.n_triangles) if tri is None else np.asarray(tri)
        outs = []
        for lo in range(0, len(tri), chunk):
            tt = tri[lo:lo + chunk]
            b = bary if bary.ndim == 2 else bary[lo:lo + chunk]
            tab = self.tabulate(b, tt)
            c = np.asarray(s)[self.dofmap[tt]]
            outs.append((np.einsum("kqic,ki->kqc", tab.tau, c),
                         np.einsum("kqic,ki->kqc", tab.div, c),
                         np.einsum("kqi,ki->kq", tab.divdiv, c)))
        return tuple(np.concatenate(z, axis=0) for z in zip(*outs))


def build_sigma_space(mesh: TriMesh) -> SigmaBaseSpace:
    nT, nV, nE = mesh.n_triangles, mesh.n_vertices, mesh.n_edges
    tris = mesh.triangles
    dofmap = np.empty((nT, N_LOCAL), dtype=np.int64)
    sidx = np.empty((nT, N_LOCAL), dtype=np.int64)
    mats = np.zeros((nT, N_LOCAL, 3))

    # vertex functions: local 0..8
    for i in range(3):
        for c in range(3):
            col = 3 * i + c
            dofmap[:, col] = 3 * tris[:, i] + c
            sidx[:, col] = _SINDEX[("v", i)]
            mats[:, col, :] = _SYM[c]

    # edge functions: local 9..20
    tn = mesh.edge_tangents
    nn = mesh.edge_normals
    Mnn = sym_components(nn, nn)
    Mnt = 2.0 * sym_components(nn, tn)
    base = 3 * nV
    for k, (i, j) in enumerate(LOCAL_EDGES.tolist()):
        e = mesh.tri_edges[:, k]
        low_is_i = tris[:, i] < tris[:, j]
        for node in range(2):
            # node 0 sits next to the lower global vertex
            near_i = low_is_i if node == 0 else ~low_is_i
            s_i = _SINDEX[("e", i, j)]
            s_j = _SINDEX[("e", j, i)]
            for comp, M in enumerate((Mnn, Mnt)):
                col = 9 + 4 * k + 2 * node + comp
                dofmap[:, col] = base + 4 * e + 2 * node + comp
                sidx[:, col] = np.where(near_i, s_i, s_j)
                mats[:, col, :] = M[e]

    # bubbles: local 21..29
    p = mesh.vertices[tris]
    bbase = 3 * nV + 4 * nE
    for k, (i, j) in enumerate(LOCAL_EDGES.tolist()):
        d = p[:, j] - p[:, i]
        t = d / np.linalg.norm(d, axis=1)[:, None]
        Mtt = sym_components(t, t)
        for m in range(3):
            b = 3 * k + m
            col = 21 + b
            dofmap[:, col] = bbase + N_BUBBLE * np.arange(nT) + b
            sidx[:, col] = _SINDEX["bubble"][(k, m)]
            mats[:, col, :] = Mtt

    for a in (dofmap, sidx, mats):
        a.setflags(write=False)
    return SigmaBaseSpace(mesh, dofmap, sidx, mats, mesh.barycentric_gradients())


# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SigmaConstraints:
    """Linear constraints ``C s = d`` cutting the divDiv-conforming subspace.

    Row kinds: 0 = moments of the jump of ``Div tau . n_e`` against P2(e);
    1 = moments of ``t_e^T tau n_e`` against P1(e) on boundary edges;
    2 = ``t_e^T tau(a) n_e`` at boundary vertices.  Together kinds 1 and 2
    pin down the cubic trace ``t_e^T tau n_e`` on every boundary edge.
    Jump moments are scaled by ``h_e`` so that every row is O(1) for an
    O(1) tensor field.
    """

    C: sp.csr_matrix
    row_kind: np.ndarray
    row_edge: np.ndarray
    n_rows_raw: int
    dropped: np.ndarray
    data_fn: Callable | None = None

    @property
    def n_rows(self) -> int:
        return self.C.shape[0]

    def data(self, case=None, t: float = 0.0) -> np.ndarray:
        if case is None or self.data_fn is None:
            return np.zeros(self.n_rows)
        return self.data_fn(case, t)


def _edge_points(mesh: TriMesh, edges: np.ndarray, slot: int, s: np.ndarray):
    """Triangles and barycentric points along ``edges`` seen from one side.

    Points run from the lower to the higher vertex id at parameters ``s``.
    """
    tri = mesh.edge_tris[edges, slot]
    k = np.argmax(mesh.tri_edges[tri] == edges[:, None], axis=1)
    i = LOCAL_EDGES[k, 0]
    j = LOCAL_EDGES[k, 1]
    vi = mesh.triangles[tri, i]
    vj = mesh.triangles[tri, j]
    low_local = np.where(vi < vj, i, j)
    high_local = np.where(vi < vj, j, i)
    bary = np.zeros((len(edges), len(s), 3))
    r = np.arange(len(edges))
    bary[r, :, low_local] = 1.0 - s
    bary[r, :, high_local] = s
    return tri, bary


def edge_physical_points(mesh: TriMesh, edges: np.ndarray, s: np.ndarray) -> np.ndarray:
    p0 = mesh.vertices[mesh.edges[edges, 0]]
    p1 = mesh.vertices[mesh.edges[edges, 1]]
    return p0[:, None, :] * (1.0 - s)[None, :, None] + p1[:, None, :] * s[None, :, None]


def build_sigma_constraints(mesh: TriMesh, space: SigmaBaseSpace) -> SigmaConstraints:
    rows, cols, vals = [], [], []
    kinds, redge = [], []
    nrow = 0
    s, w = interval_rule(8)
    Q2 = legendre_on_unit(2, s)  # (nq, 3)
    Q1 = Q2[:, :2]
    h = mesh.edge_lengths
    nE = mesh.n_edges
    allE = np.arange(nE)
    n_e = mesh.edge_normals
    t_e = mesh.edge_tangents

    # kind 0: jump of Div tau . n_e against P2
    rowbase = nrow + 3 * allE
    for slot, sgn in ((0, 1.0), (1, -1.0)):
        E = allE[mesh.edge_tris[:, slot] >= 0]
        tri, bary = _edge_points(mesh, E, slot, s)
        tab = space.tabulate(bary, tri)
        dn = np.einsum("eqic,ec->eqi", tab.div, n_e[E])  # (nE', nq, 30)
        mom = sgn * h[E, None, None] * np.einsum("eqi,q,qk->eki", dn, w, Q2)
        r = np.broadcast_to(rowbase[E][:, None, None] + np.arange(3)[None, :, None], mom.shape)
        c = np.broadcast_to(space.dofmap[tri][:, None, :], mom.shape)
        rows.append(r.ravel()); cols.append(c.ravel()); vals.append(mom.ravel())
    kinds.append(np.zeros(3 * nE, dtype=int))
    redge.append(np.repeat(allE, 3))
    nrow += 3 * nE

    # kind 1: boundary t^T tau n against P1
    bE = np.flatnonzero(mesh.boundary_edge)
    tri, bary = _edge_points(mesh, bE, 0, s)
    tab = space.tabulate(bary, tri, need="tau")
    tn = sym_components(t_e[bE], n_e[bE])  # t^T tau n = tau : sym(t n^T)
    vtn = frob(tab.tau, tn[:, None, None, :])  # (nb, nq, 30)
    mom = np.einsum("eqi,q,qk->eki", vtn, w, Q1)
    r = nrow + 2 * np.arange(len(bE))[:, None, None] + np.arange(2)[None, :, None]
    r = np.broadcast_to(r, mom.shape)
    c = np.broadcast_to(space.dofmap[tri][:, None, :], mom.shape)
    rows.append(r.ravel()); cols.append(c.ravel()); vals.append(mom.ravel())
    kinds.append(np.ones(2 * len(bE), dtype=int))
    redge.append(np.repeat(bE, 2))
    nrow += 2 * len(bE)

    # kind 2: t^T tau n at boundary vertices
    vb = mesh.vertex_boundary_edges()
    vrows = []
    for a in sorted(vb):
        for e in vb[a]:
            coef = sym_components(t_e[e], n_e[e]) * np.array([1.0, 2.0, 1.0])
            vrows.append((a, e, coef))
    n_raw = nrow + len(vrows)
    keep_v, dropped = [], []
    by_vertex: dict[int, list] = {}
    for a, e, coef in vrows:
        by_vertex.setdefault(a, []).append((e, coef))
    for a in sorted(by_vertex):
        basis = []
        for e, coef in by_vertex[a]:
            if basis:
                Bm = np.array(basis)
                res = coef - Bm.T @ np.linalg.lstsq(Bm.T, coef, rcond=None)[0]
                if np.linalg.norm(res) <= 1e-12 * np.linalg.norm(coef):
                    dropped.append((a, e))
                    continue
            basis.append(coef)
            keep_v.append((a, e, coef))
    for a, e, coef in keep_v:
        rows.append(np.full(3, nrow)); cols.append(3 * a + np.arange(3)); vals.append(coef)
        kinds.append(np.array([2])); redge.append(np.array([e]))
        nrow += 1
    if dropped:
        log.info("dropped %d dependent vertex trace rows", len(dropped))

    C = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nrow, space.dim))
    C.sum_duplicates()
    C.eliminate_zeros()
    kind = np.concatenate(kinds)
    redge_a = np.concatenate(redge)
    vert_rows = [(a, e) for a, e, _ in keep_v]

    def data_fn(case, t):
        d = np.zeros(nrow)
        # kind 0 on boundary edges: Div sigma . n_e
        x = edge_physical_points(mesh, bE, s)
        dv = case.div_sigma(x[..., 0], x[..., 1], t)
        dn = np.einsum("eqd,ed->eq", dv, n_e[bE])
        d[(3 * bE)[:, None] + np.arange(3)] = h[bE, None] * np.einsum("eq,q,qk->ek", dn, w, Q2)
        # kind 1: t^T sigma n moments
        sig = case.sigma(x[..., 0], x[..., 1], t)
        stn = frob(sig, tn[:, None, :])
        off = 3 * nE
        d[off + 2 * np.arange(len(bE))[:, None] + np.arange(2)] = np.einsum("eq,q,qk->ek", stn, w, Q1)
        off += 2 * len(bE)
        for r, (a, e) in enumerate(vert_rows):
            xa, ya = mesh.vertices[a]
            sg = case.sigma(np.array([xa]), np.array([ya]), t)[0]
            d[off + r] = frob(sg, sym_components(t_e[e], n_e[e]))
        return d

    return SigmaConstraints(C, kind, redge_a, n_raw, np.array(dropped, dtype=np.int64).reshape(-1, 2),
                            data_fn)


# ---------------------------------------------------------------------------
# scalar spaces
# ---------------------------------------------------------------------------

_P1 = BaryBasis([{(1, 0, 0): 1.0}, {(0, 1, 0): 1.0}, {(0, 0, 1): 1.0}])


@dataclass(frozen=True, eq=False)
class VSpace:
    """Discontinuous piecewise linears; dof ``3K + i`` is the value at vertex i of K."""

    mesh: TriMesh

    @property
    def dim(self) -> int:
        return 3 * self.mesh.n_triangles

    @property
    def dofmap(self) -> np.ndarray:
        return np.arange(self.dim).reshape(-1, 3)

    def tabulate(self, bary: np.ndarray) -> np.ndarray:
        return _P1.tabulate(bary)

    def evaluate(self, w: np.ndarray, bary: np.ndarray) -> np.ndarray:
        W = np.asarray(w).reshape(-1, 3)
        if bary.ndim == 2:
            return W @ bary.T
        return np.einsum("kqa,ka->kq", bary, W)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        """Elementwise constant gradients, shape (nT, 2)."""
        G = self.mesh.barycentric_gradients()
        return np.einsum("ka,kad->kd", np.asarray(w).reshape(-1, 3), G)

    def interpolate(self, fn: Callable) -> np.ndarray:
        p = self.mesh.vertices[self.mesh.triangles]
        return fn(p[..., 0], p[..., 1]).ravel()


def build_v_space(mesh: TriMesh) -> VSpace:
    return VSpace(mesh)


_P5, _P5_EXPS = bernstein(5)


@dataclass(frozen=True, eq=False)
class PostSpace:
    """Discontinuous quintics in Bernstein form, 21 per triangle."""

    mesh: TriMesh
    basis: BaryBasis = _P5

    @property
    def local_dim(self) -> int:
        return len(self.basis)

    @property
    def dim(self) -> int:
        return self.local_dim * self.mesh.n_triangles

    def evaluate(self, c: np.ndarray, bary: np.ndarray) -> np.ndarray:
        C = np.asarray(c).reshape(self.mesh.n_triangles, -1)
        vals = self.basis.tabulate(bary)
        if bary.ndim == 2:
            return C @ vals.T
        return np.einsum("kqf,kf->kq", vals, C)


@dataclass(frozen=True, eq=False)
class MorleySpace:
    """Morley element: vertex values and edge-mean normal derivatives.

    The normal-derivative dof of edge ``e`` is taken along the global
    normal ``n_e``.  Global numbering: vertices, then edges.
    """

    mesh: TriMesh
    dofmap: np.ndarray       # (nT, 6)
    coef: np.ndarray         # (nT, 6, 6) local basis in the P2 Bernstein form
    basis: BaryBasis

    @property
    def dim(self) -> int:
        return self.mesh.n_vertices + self.mesh.n_edges

    def tabulate(self, bary: np.ndarray, nderiv: int = 2):
        """Values, gradients and Hessians of the 6 local functions per triangle."""
        out = self.basis.tabulate(bary, nderiv)
        nT = self.mesh.n_triangles
        if nderiv == 0:
            v = out
            if bary.ndim == 2:
                v = np.broadcast_to(v, (nT,) + v.shape)
            return np.einsum("kqb,kfb->kqf", v, self.coef)
        v, d1, d2 = out if nderiv == 2 else (*out, None)
        if bary.ndim == 2:
            v = np.broadcast_to(v, (nT,) + v.shape)
            d1 = np.broadcast_to(d1, (nT,) + d1.shape)
            if d2 is not None:
                d2 = np.broadcast_to(d2, (nT,) + d2.shape)
        g, H = to_physical(d1, d2, self.mesh.barycentric_gradients())
        v = np.einsum("kqb,kfb->kqf", v, self.coef)
        g = np.einsum("kqbd,kfb->kqfd", g, self.coef)
        if H is not None:
            H = np.einsum("kqbde,kfb->kqfde", H, self.coef)
        return v, g, H


def build_morley_space(mesh: TriMesh) -> MorleySpace:
    basis, exps = bernstein(2)
    nT = mesh.n_triangles
    G = mesh.barycentric_gradients()
    # dof functionals applied to the 6 Bernstein functions
    D = np.zeros((nT, 6, 6))
    verts = np.eye(3)
    D[:, 0:3, :] = basis.tabulate(verts)[None]
    s, w = interval_rule(4)
    n_glob = mesh.edge_normals
    for k, (i, j) in enumerate(LOCAL_EDGES.tolist()):
        bary = np.zeros((len(s), 3))
        bary[:, i] = 1.0 - s
        bary[:, j] = s
        _, d1 = basis.tabulate(bary, 1)
        g = np.einsum("qba,kad->kqbd", d1, G)
        e = mesh.tri_edges[:, k]
        dn = np.einsum("kqbd,kd->kqb", g, n_glob[e])
        D[:, 3 + k, :] = np.einsum("kqb,q->kb", dn, w)
    coef = np.linalg.inv(D).transpose(0, 2, 1)  # row f: function dual to dof f
    dofmap = np.concatenate([mesh.triangles, mesh.n_vertices + mesh.tri_edges], axis=1)
    return MorleySpace(mesh, dofmap, coef, basis)


@dataclass(frozen=True, eq=False)
class P1Space:
    """Continuous piecewise linears."""

    mesh: TriMesh

    @property
    def dim(self) -> int:
        return self.mesh.n_vertices

    @property
    def dofmap(self) -> np.ndarray:
        return self.mesh.triangles


@dataclass(frozen=True, eq=False)
class AuxSpaces:
    post: PostSpace
    morley: MorleySpace
    p1: P1Space


def build_aux_spaces(mesh: TriMesh) -> AuxSpaces:
    return AuxSpaces(PostSpace(mesh), build_morley_space(mesh), P1Space(mesh))
