"""Error norms, convergence tables, the broken H2 seminorm, inf-sup and audits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .elements import _edge_points, frob, sym_components
from .mesh import TriMesh
from .linsolve import factorize
from .quadrature import interval_rule, legendre_on_unit, triangle_rule

ERROR_DEGREE = 12


# ---------------------------------------------------------------------------
# error norms and tables
# ---------------------------------------------------------------------------

def error_norms(case, ops, state, t: float, post=None, degree: int = ERROR_DEGREE) -> dict:
    """L2 errors of sigma (Frobenius), u and optionally the reconstruction."""
    mesh = ops.mesh
    q = triangle_rule(degree)
    x = mesh.to_physical(q.points)
    wK = 2.0 * mesh.areas[:, None] * q.weights[None, :]
    tau, _, _ = ops.sigma_space.evaluate(state.s, q.points)
    ds = case.sigma(x[..., 0], x[..., 1], t) - tau
    ue = case.u(x[..., 0], x[..., 1], t)
    du = ue - ops.v_space.evaluate(state.w, q.points)
    out = {"sigma": math.sqrt(float((wK * frob(ds, ds)).sum())),
           "u": math.sqrt(float((wK * du ** 2).sum()))}
    if post is not None:
        dp = ue - post.evaluate(q.points)
        out["upost"] = math.sqrt(float((wK * dp ** 2).sum()))
    return out


def eoc(errors) -> list:
    """Rates log2(e_{l-1}/e_l); None where either error is below 1e-14."""
    out = [None]
    for a, b in zip(errors[:-1], errors[1:]):
        if a is None or b is None or a <= 1e-14 or b <= 1e-14:
            out.append(None)
        else:
            out.append(math.log2(a / b))
    return out


@dataclass
class EocReport:
    levels: list = field(default_factory=list)
    h: list = field(default_factory=list)
    err_sigma: list = field(default_factory=list)
    err_u: list = field(default_factory=list)
    err_upost: list | None = None
    label: str = ""

    def add(self, level: int, h: float, errs: dict) -> None:
        if self.levels and level <= self.levels[-1]:
            raise ValueError("levels must increase")
        self.levels.append(level)
        self.h.append(h)
        self.err_sigma.append(errs["sigma"])
        self.err_u.append(errs["u"])
        if "upost" in errs:
            if self.err_upost is None:
                self.err_upost = []
            self.err_upost.append(errs["upost"])

    @property
    def rate_sigma(self):
        return eoc(self.err_sigma)

    @property
    def rate_u(self):
        return eoc(self.err_u)

    @property
    def rate_upost(self):
        return eoc(self.err_upost) if self.err_upost is not None else None

    def to_csv(self) -> str:
        post = self.err_upost is not None
        head = "mesh,h,err_sigma,rate_sigma,err_u,rate_u"
        lines = [head + (",err_upost,rate_upost" if post else "")]
        rs, ru = self.rate_sigma, self.rate_u
        rp = self.rate_upost if post else None
        fe = lambda v: f"{v:.2E}"
        fr = lambda v: "-" if v is None else f"{v:.2f}"
        for i, lev in enumerate(self.levels):
            row = [str(lev), fe(self.h[i]), fe(self.err_sigma[i]), fr(rs[i]),
                   fe(self.err_u[i]), fr(ru[i])]
            if post:
                row += [fe(self.err_upost[i]), fr(rp[i])]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def step_for(rule: str, h: float, tau: float | None = None) -> float:
    """Time step for a rule; ``h`` is the leg length of the right-triangle cells."""
    if rule == "fixed":
        if tau is None:
            raise ValueError("fixed rule needs tau")
        return tau
    if rule == "h2":
        return h * h
    if rule == "h4":
        return h ** 4
    raise ValueError(f"unknown time-step rule {rule!r}")


def eoc_study(case: str, levels, T: float, tau_rule: str = "fixed", tau: float | None = None,
              eps: float = 1.0, postprocess: bool = False, domain: str | None = None,
              label: str = "", progress=None) -> EocReport:
    """Run the full pipeline on each mesh level and tabulate final-time errors."""
    from .ch_solver import RunConfig, run
    from .mesh import build_mesh

    domain = domain or case
    rep = EocReport(label=label)
    for lev in levels:
        h = build_mesh(domain, lev).h
        # the rules are stated in the cell side, i.e. the diameter over sqrt(2)
        dt = step_for(tau_rule, h / math.sqrt(2.0), tau)
        N = max(1, int(round(T / dt)))
        cfg = RunConfig(domain=domain, level=lev, eps=eps, tau=T / N, T=T, case=case,
                        postprocess=postprocess, record_mass=False)
        res = run(cfg)
        rep.add(lev, h, res.errors)
        if progress is not None:
            progress(lev, res)
    return rep


def projection_study(levels, case: str = "square", t: float = 0.0) -> EocReport:
    """Errors of the coupled elliptic projection of a manufactured pair."""
    from .assembly import build_operators
    from .ch_solver import project_init
    from .manufactured import case_by_name
    from .mesh import build_mesh

    c = case_by_name(case)
    rep = EocReport(label=f"projection/{case}")
    for lev in levels:
        ops = build_operators(build_mesh(case, lev))
        st = project_init(ops, c, t)
        rep.add(lev, ops.mesh.h, error_norms(c, ops, st, t))
    return rep


# ---------------------------------------------------------------------------
# broken H2 seminorm on piecewise linears
# ---------------------------------------------------------------------------

def seminorm_operator(mesh: TriMesh) -> sp.csr_matrix:
    """Sparse ``J`` with ``|v|_{2,h}^2 = |J v|^2`` for piecewise linear ``v``.

    Rows sample value jumps on interior edges (weighted by h_e^{-3}) and
    normal-derivative jumps on all edges (weighted by h_e^{-1}); on boundary
    edges the jump is the one-sided trace.  The elementwise Hessian term is
    zero for linears.
    """
    s, w = interval_rule(2)
    G = mesh.barycentric_gradients()
    h = mesh.edge_lengths
    n = mesh.edge_normals
    rows, cols, vals = [], [], []
    r0 = 0
    E = np.arange(mesh.n_edges)
    inner = E[~mesh.boundary_edge]
    # value jumps: sqrt(w_q h_e * h_e^{-3})
    for slot, sgn in ((0, 1.0), (1, -1.0)):
        tri, bary = _edge_points(mesh, inner, slot, s)
        wt = np.sqrt(w)[None, :, None] / h[inner][:, None, None]
        v = sgn * wt * bary  # (ne, nq, 3)
        r = r0 + len(s) * np.arange(len(inner))[:, None, None] + np.arange(len(s))[None, :, None]
        c = 3 * tri[:, None, None] + np.arange(3)[None, None, :]
        rows.append(np.broadcast_to(r, v.shape).ravel())
        cols.append(np.broadcast_to(c, v.shape).ravel())
        vals.append(v.ravel())
    r0 += len(s) * len(inner)
    # normal-derivative jumps: sqrt(h_e * h_e^{-1}) = 1
    for slot, sgn in ((0, 1.0), (1, -1.0)):
        Es = E[mesh.edge_tris[:, slot] >= 0]
        tri = mesh.edge_tris[Es, slot]
        v = sgn * np.einsum("kad,kd->ka", G[tri], n[Es])
        rows.append(np.repeat(r0 + Es, 3))
        cols.append((3 * tri[:, None] + np.arange(3)).ravel())
        vals.append(v.ravel())
    r0 += mesh.n_edges
    J = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(r0, 3 * mesh.n_triangles))
    J.sum_duplicates()
    return J


def seminorm_2h(mesh: TriMesh, v: np.ndarray) -> float:
    J = seminorm_operator(mesh)
    return float(np.linalg.norm(J @ np.asarray(v)))


# ---------------------------------------------------------------------------
# inf-sup
# ---------------------------------------------------------------------------

def numerical_infsup(ops, constrained: bool = True) -> float:
    """Discrete inf-sup constant of divDiv between the tensor and scalar spaces.

    Computed densely as the square root of the smallest generalized
    eigenvalue of ``(B Z (Z'MZ)^{-1} Z'B', G)`` on mean-free scalars, where
    ``Z`` spans ker C (or the whole base space when ``constrained`` is
    false) and ``G`` is the seminorm Gram matrix.
    """
    M = ops.M_sigma.toarray()
    B = ops.B.toarray()
    if constrained:
        Z = sla.null_space(ops.C.toarray())
        Mz = Z.T @ M @ Z
        Bz = B @ Z
    else:
        Mz, Bz = M, B
    L = sla.cholesky(Mz, lower=True)
    X = sla.solve_triangular(L, Bz.T, lower=True)
    S = X.T @ X
    J = seminorm_operator(ops.mesh)
    Gm = (J.T @ J).toarray()
    j = ops.j_u / np.linalg.norm(ops.j_u)
    Q = sla.null_space(j[None, :])
    G0 = Q.T @ Gm @ Q
    S0 = Q.T @ S @ Q
    try:
        lam = sla.eigh(S0, G0, eigvals_only=True, subset_by_index=[0, 0])[0]
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("seminorm Gram matrix is singular on mean-free fields") from exc
    return math.sqrt(max(lam, 0.0))


def numerical_infsup_sparse(ops, shift: float = -0.05) -> float:
    """Sparse variant of :func:`numerical_infsup` on ker C for finer meshes.

    Shift-invert Lanczos on ``S v = lam G~ v`` with ``G~ = G + j j'/|j|^2``.
    The constants give ``lam = 0``; the next eigenvalue is ``beta_h^2``.
    Solves with ``S - shift G~`` go through one sparse block system in
    ``(z, m, v, mu)``.
    """
    from scipy.sparse.linalg import LinearOperator, eigsh

    nS, nV, nC = ops.sizes
    M, B, C = ops.M_sigma, ops.B, ops.C
    J = seminorm_operator(ops.mesh)
    G = (J.T @ J).tocsr()
    j = ops.j_u / np.linalg.norm(ops.j_u)
    jc = sp.csr_matrix(j[:, None])
    inner = factorize(sp.bmat([[M, C.T], [C, None]]).tocsc())
    K = sp.bmat([[M, C.T, -B.T, None],
                 [C, None, None, None],
                 [B, None, -shift * G, -shift * jc],
                 [None, None, jc.T, sp.csr_matrix(-np.ones((1, 1)))]]).tocsc()
    outer = factorize(K)
    top = np.zeros(nS + nC)

    def smul(v):
        top[:nS] = B.T @ v
        return B @ inner.solve(top)[:nS]

    def opinv(b):
        rhs = np.concatenate([np.zeros(nS + nC), b, [0.0]])
        return outer.solve(rhs)[nS + nC:nS + nC + nV]

    gmul = lambda v: G @ v + j * (j @ v)
    lam = eigsh(LinearOperator((nV, nV), smul), k=2, M=LinearOperator((nV, nV), gmul),
                sigma=shift, OPinv=LinearOperator((nV, nV), opinv), which="LM",
                return_eigenvectors=False)
    return math.sqrt(max(float(np.max(lam)), 0.0))


# ---------------------------------------------------------------------------
# conformity audit
# ---------------------------------------------------------------------------

def kernel_samples(C: sp.spmatrix, n: int, rng: np.random.Generator) -> np.ndarray:
    """Random vectors projected onto ker C in the least-squares sense."""
    R = rng.standard_normal((C.shape[1], n))
    CC = (C @ C.T).tocsc()
    lu = factorize(CC)
    return R - C.T @ lu.solve(C @ R)


def _edge_moment_violations(ops, S: np.ndarray) -> dict:
    mesh, space = ops.mesh, ops.sigma_space
    s, w = interval_rule(10)
    Q2 = legendre_on_unit(2, s)
    Q3 = legendre_on_unit(3, s)
    nE = mesh.n_edges
    E = np.arange(nE)
    n = mesh.edge_normals
    t = mesh.edge_tangents
    inner = E[~mesh.boundary_edge]
    bnd = E[mesh.boundary_edge]
    out = {}

    def side(edges, slot):
        tri, bary = _edge_points(mesh, edges, slot, s)
        tab = space.tabulate(bary, tri)
        c = S[space.dofmap[tri]]  # (ne, 30, ns)
        tau = np.einsum("eqic,eir->reqc", tab.tau, c)
        div = np.einsum("eqid,eir->reqd", tab.div, c)
        return tau, div

    ta, da = side(inner, 0)
    tb, db = side(inner, 1)
    nI = n[inner][None, :, None, :]

    def tn(tau, nn):
        return np.stack([tau[..., 0] * nn[..., 0] + tau[..., 1] * nn[..., 1],
                         tau[..., 1] * nn[..., 0] + tau[..., 2] * nn[..., 1]], -1)

    scale = max(np.abs(ta).max(), 1.0)
    out["normal_trace_jump"] = float(np.abs(tn(ta, nI) - tn(tb, nI)).max() / scale)
    jump = ((da - db) * nI).sum(-1)  # (ns, ne, nq)
    out["div_normal_jump_moments"] = float(np.abs(np.einsum("req,q,qk->rek", jump, w, Q2)).max()
                                           * mesh.edge_lengths.min() / scale)
    tc, dc = side(bnd, 0)
    tnb = frob(tc, sym_components(t[bnd], n[bnd])[None, :, None, :])
    out["boundary_tn_moments"] = float(np.abs(np.einsum("req,q,qk->rek", tnb, w, Q3)).max() / scale)
    dnb = (dc * n[bnd][None, :, None, :]).sum(-1)
    out["boundary_div_moments"] = float(np.abs(np.einsum("req,q,qk->rek", dnb, w, Q2)).max()
                                        * mesh.edge_lengths.min() / scale)
    return out


def green_identity_gap(ops, S: np.ndarray, degree: int = ERROR_DEGREE) -> float:
    """max over samples of |(divDiv tau, v) - (tau, hess v)| for v = cos(pi x) cos(pi y)."""
    mesh = ops.mesh
    q = triangle_rule(degree)
    x = mesh.to_physical(q.points)
    wK = 2.0 * mesh.areas[:, None] * q.weights[None, :]
    pi = np.pi
    X, Y = x[..., 0], x[..., 1]
    v = np.cos(pi * X) * np.cos(pi * Y)
    hv = np.stack([-pi ** 2 * v, pi ** 2 * np.sin(pi * X) * np.sin(pi * Y), -pi ** 2 * v], -1)
    tab = ops.sigma_space.tabulate(q.points)
    a = np.einsum("kq,kqi,kq->ki", wK, tab.divdiv, v)
    b = np.einsum("kq,kqic,kqc->ki", wK, tab.tau * np.array([1.0, 2.0, 1.0]), hv)
    gaps = []
    for r in range(S.shape[1]):
        c = S[:, r][ops.sigma_space.dofmap]
        gaps.append(abs(float((a * c).sum() - (b * c).sum())) / max(np.abs(S[:, r]).max(), 1.0))
    return max(gaps)


def conformity_audit(ops, n_samples: int = 20, seed: int = 0, constrained: bool = True) -> dict:
    """Check random members of ker C (or unconstrained vectors) against the conformity conditions."""
    rng = np.random.default_rng(seed)
    if constrained:
        S = kernel_samples(ops.C, n_samples, rng)
    else:
        S = rng.standard_normal((ops.sigma_space.dim, n_samples))
    rep = _edge_moment_violations(ops, S)
    rep["max_violation"] = max(rep.values())
    rep["constraint_residual"] = float(np.abs(ops.C @ S).max())
    return rep


# ---------------------------------------------------------------------------
# zero level set topology
# ---------------------------------------------------------------------------

def count_zero_level_components(mesh: TriMesh, vertex_values: np.ndarray) -> int:
    """Number of connected pieces of the piecewise-linear zero contour."""
    pos = np.asarray(vertex_values) > 0.0
    crossed = pos[mesh.edges[:, 0]] != pos[mesh.edges[:, 1]]
    parent = np.arange(mesh.n_edges)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for k in range(mesh.n_triangles):
        es = [e for e in mesh.tri_edges[k] if crossed[e]]
        if len(es) == 2:
            ra, rb = find(es[0]), find(es[1])
            if ra != rb:
                parent[ra] = rb
    return len({find(e) for e in np.flatnonzero(crossed)})


def vertex_average(mesh: TriMesh, w: np.ndarray) -> np.ndarray:
    cnt = np.bincount(mesh.triangles.ravel(), minlength=mesh.n_vertices)
    return np.bincount(mesh.triangles.ravel(), np.asarray(w).ravel(),
                       minlength=mesh.n_vertices) / cnt
