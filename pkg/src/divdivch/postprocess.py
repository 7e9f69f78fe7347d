"""Elementwise quintic reconstruction of the scalar field.

On each triangle ``K`` the reconstruction ``r`` in P5(K) solves

    (hess r, hess q)_K = (sigma_h + f(u_h) I / eps^2, hess q)_K   for all q in P5(K)
    (r, v)_K           = (u_h, v)_K                                for all v in P1(K)

as a 24 x 24 saddle system.  The Hessian form is singular exactly on P1,
which the moment rows pin down.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elements import PostSpace
from .manufactured import f
from .mesh import TriMesh
from .poly import bernstein, to_physical
from .quadrature import triangle_rule

_P5, _ = bernstein(5)
_P1_MASS = (np.ones((3, 3)) + np.eye(3)) / 24.0
LOCAL_DEGREE = 10


def _hessians(mesh: TriMesh, bary: np.ndarray):
    """Values (nq, 21) and physical Hessians (nT, nq, 21, 3) of the P5 basis."""
    v, d1, d2 = _P5.tabulate(bary, 2)
    nT = mesh.n_triangles
    G = mesh.barycentric_gradients()
    d1 = np.broadcast_to(d1, (nT,) + d1.shape)
    d2 = np.broadcast_to(d2, (nT,) + d2.shape)
    _, H = to_physical(d1, d2, G)
    return v, np.stack([H[..., 0, 0], H[..., 0, 1], H[..., 1, 1]], -1)


@dataclass(eq=False)
class PostField:
    """Per-triangle quintic coefficients in the Bernstein basis, shape (nT, 21)."""

    mesh: TriMesh
    coef: np.ndarray

    @property
    def space(self) -> PostSpace:
        return PostSpace(self.mesh)

    def evaluate(self, bary: np.ndarray) -> np.ndarray:
        vals = _P5.tabulate(bary)
        if bary.ndim == 2:
            return self.coef @ vals.T
        return np.einsum("kqf,kf->kq", vals, self.coef)

    def p1_moments(self, degree: int = LOCAL_DEGREE) -> np.ndarray:
        """Vector ``(r, psi_i)`` against the piecewise linear basis."""
        q = triangle_rule(degree)
        vals = self.evaluate(q.points)
        wK = 2.0 * self.mesh.areas[:, None] * q.weights[None, :]
        return np.einsum("kq,kq,qa->ka", wK, vals, q.points).ravel()

    def element_means(self) -> np.ndarray:
        # Bernstein polynomials of degree p all integrate to |K| / C(p+2, 2)
        return self.coef.mean(axis=1)


def reconstruct_local(ops, s: np.ndarray, w: np.ndarray, eps: float,
                      degree: int = LOCAL_DEGREE, hess_data=None) -> PostField:
    """Quintic reconstruction from a tensor field and a piecewise linear field.

    ``ops`` supplies the mesh and the tensor space.  ``hess_data`` may be
    given directly as values (nT, nq, 3) at the degree rule points, which
    replaces ``sigma_h + f(u_h) I / eps^2``.
    """
    mesh = ops.mesh
    q = triangle_rule(degree)
    area = mesh.areas
    wK = 2.0 * area[:, None] * q.weights[None, :]
    vals, H = _hessians(mesh, q.points)
    if hess_data is None:
        tau, _, _ = ops.sigma_space.evaluate(s, q.points)
        u = np.asarray(w).reshape(-1, 3) @ q.points.T
        data = tau.copy()
        fu = f(u) / eps ** 2
        data[..., 0] += fu
        data[..., 2] += fu
    else:
        data = hess_data
    A = np.einsum("kq,kqac,kqbc->kab", wK, H * np.array([1.0, 2.0, 1.0]), H)
    rh = np.einsum("kq,kqac,kqc->ka", wK, H * np.array([1.0, 2.0, 1.0]), data)
    P = np.einsum("kq,qi,qa->kia", wK, q.points, vals)  # (nT, 3, 21)
    Wl = np.asarray(w).reshape(-1, 3)
    rm = 2.0 * area[:, None] * (Wl @ _P1_MASS)
    # scale the moment rows to the size of the Hessian block
    diam2 = (mesh.diameters() ** 2)[:, None, None]
    P = P / diam2
    rm = rm / diam2[:, :, 0]
    nT = mesh.n_triangles
    K = np.zeros((nT, 24, 24))
    K[:, :21, :21] = A
    K[:, :21, 21:] = P.transpose(0, 2, 1)
    K[:, 21:, :21] = P
    rhs = np.concatenate([rh, rm], axis=1)
    try:
        sol = np.linalg.solve(K, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        bad = [k for k in range(nT) if np.linalg.matrix_rank(K[k]) < 24]
        raise np.linalg.LinAlgError(f"singular local system on triangles {bad[:10]}") from exc
    return PostField(mesh, sol[:, :21])


def improved_final_step(stepper, state, eps: float | None = None):
    """Final step using the reconstruction of ``state`` in place of ``u_h``."""
    post = reconstruct_local(stepper.ops, state.s, state.w, eps or stepper.eps)
    return stepper.step(state, prev_post=post)
