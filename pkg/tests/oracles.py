"""Independent oracles shared by the unit tests and the acceptance suite."""
import math

import numpy as np

from divdivch.assembly import l2_project_v
from divdivch.mesh import LOCAL_EDGES
from divdivch.postprocess import reconstruct_local
from divdivch.quadrature import interval_rule, triangle_rule


def divdiv_ibp_gap(ops, s: np.ndarray) -> float:
    """Relative gap between ``B s`` and (Div tau . n, v)_dK - (Div tau, grad v)_K per element."""
    mesh, S = ops.mesh, ops.sigma_space
    direct = ops.B @ s
    q = triangle_rule(6)
    _, div, _ = S.evaluate(s, q.points)
    G = mesh.barycentric_gradients()
    wK = 2.0 * mesh.areas[:, None] * q.weights[None, :]
    vol = np.einsum("kq,kqd,kad->ka", wK, div, G)
    e, w = interval_rule(8)
    bnd = np.zeros((mesh.n_triangles, 3))
    P = mesh.vertices[mesh.triangles]
    for i, j in LOCAL_EDGES.tolist():
        bary = np.zeros((len(e), 3))
        bary[:, i], bary[:, j] = 1 - e, e
        _, d, _ = S.evaluate(s, bary)
        vec = P[:, j] - P[:, i]
        L = np.linalg.norm(vec, axis=1)
        n = np.stack([vec[:, 1], -vec[:, 0]], 1) / L[:, None]
        dn = np.einsum("kqd,kd->kq", d, n)
        bnd[:, i] += L * ((dn * (1 - e)) @ w)
        bnd[:, j] += L * ((dn * e) @ w)
    ibp = (bnd - vol).ravel()
    return float(np.abs(direct - ibp).max() / max(1.0, np.abs(direct).max()))


def _grad_fd(fn, x, y, h):
    return np.stack([(fn(x + h, y) - fn(x - h, y)) / (2 * h),
                     (fn(x, y + h) - fn(x, y - h)) / (2 * h)], -1)


def _rel(a, b):
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-30))


def sample_points(domain: str, rng, n: int = 40):
    if domain == "square":
        return rng.uniform(0.05, 0.95, n), rng.uniform(0.05, 0.95, n)
    # keep away from the re-entrant corner and the slit so the stencils stay inside
    pts = []
    while len(pts) < n:
        x, y = rng.uniform(-0.95, 0.95, 2)
        if not (x > -0.05 and y < 0.05) and math.hypot(x, y) > 0.2:
            pts.append((x, y))
    p = np.array(pts)
    return p[:, 0], p[:, 1]


def fd_deviations(case, x, y, t: float = 0.3, h: float = 1e-5) -> dict:
    """Relative deviation of each closed-form derivative from central differences."""
    out = {"grad": _rel(_grad_fd(lambda a, b: case.u(a, b, t), x, y, h), case.grad(x, y, t))}
    gx = _grad_fd(lambda a, b: case.grad(a, b, t)[..., 0], x, y, h)
    gy = _grad_fd(lambda a, b: case.grad(a, b, t)[..., 1], x, y, h)
    out["hess"] = _rel(np.stack([gx[:, 0], gx[:, 1], gy[:, 1]], -1), case.hess(x, y, t))
    out["grad_lap"] = _rel(_grad_fd(lambda a, b: case.lap(a, b, t), x, y, h), case.grad_lap(x, y, t))
    ut = (case.u(x, y, t + h) - case.u(x, y, t - h)) / (2 * h)
    out["u_t"] = _rel(ut, case.u_t(x, y, t))
    dv = lambda i: (lambda a, b: case.div_sigma(a, b, t)[..., i])
    dd = _grad_fd(dv(0), x, y, h)[:, 0] + _grad_fd(dv(1), x, y, h)[:, 1]
    out["divdiv_sigma"] = _rel(dd, case.divdiv_sigma(x, y, t))
    s = lambda i: (lambda a, b: case.sigma(a, b, t)[..., i])
    ds = np.stack([_grad_fd(s(0), x, y, h)[:, 0] + _grad_fd(s(1), x, y, h)[:, 1],
                   _grad_fd(s(1), x, y, h)[:, 0] + _grad_fd(s(2), x, y, h)[:, 1]], -1)
    out["div_sigma"] = _rel(ds, case.div_sigma(x, y, t))
    return out


# a fixed random quintic and its Hessian
_C = np.random.default_rng(7).standard_normal(21)
_E = [(i, j) for i in range(6) for j in range(6 - i)]


def quintic(x, y):
    return sum(c * x ** i * y ** j for c, (i, j) in zip(_C, _E))


def quintic_hess(x, y):
    def d(a, b):
        out = 0 * x
        for c, (i, j) in zip(_C, _E):
            if i >= a and j >= b:
                ci = np.prod(range(i - a + 1, i + 1)) * np.prod(range(j - b + 1, j + 1))
                out = out + c * ci * x ** (i - a) * y ** (j - b)
        return out
    return np.stack([d(2, 0), d(1, 1), d(0, 2)], -1)


def quintic_reconstruction_gap(ops) -> float:
    """Max error of the local reconstruction fed the exact Hessian of a quintic."""
    q = triangle_rule(10)
    x = ops.mesh.to_physical(q.points)
    w = l2_project_v(ops, quintic)
    post = reconstruct_local(ops, None, w, 1.0, hess_data=quintic_hess(x[..., 0], x[..., 1]))
    qq = triangle_rule(12)
    xx = ops.mesh.to_physical(qq.points)
    return float(np.abs(post.evaluate(qq.points) - quintic(xx[..., 0], xx[..., 1])).max())
