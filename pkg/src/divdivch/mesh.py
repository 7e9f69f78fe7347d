"""Conforming triangulations of the square and L-shaped domains.

Edges are oriented from the lower to the higher vertex id.  The unit
tangent ``t_e`` follows that orientation and the edge normal is
``n_e = (t_y, -t_x)``.  For triangle ``K`` and local edge ``k`` (opposite
local vertex ``k``) the stored sign is ``+1`` when ``n_e`` points out of
``K``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

DOMAINS = ("square", "lshape")

# local edge k joins local vertices (k+1, k+2)
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


class EdgeFrame(NamedTuple):
    t: np.ndarray
    n: np.ndarray
    h: float


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    level: int = 0
    domain: str = "custom"
    edges: np.ndarray = field(init=False, repr=False)
    tri_edges: np.ndarray = field(init=False, repr=False)
    tri_edge_sign: np.ndarray = field(init=False, repr=False)
    edge_tris: np.ndarray = field(init=False, repr=False)
    boundary_edge: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        area = _signed_areas(v, t)
        if np.any(area <= 0.0):
            raise ValueError("triangles must be counterclockwise and nondegenerate")

        loc = t[:, LOCAL_EDGES]  # (nT, 3, 2)
        lo = loc.min(axis=2)
        hi = loc.max(axis=2)
        keys = lo * len(v) + hi
        uniq, inv = np.unique(keys.ravel(), return_inverse=True)
        edges = np.stack([uniq // len(v), uniq % len(v)], axis=1)
        tri_edges = inv.reshape(-1, 3)
        sign = np.where(loc[:, :, 0] == lo, 1, -1)

        counts = np.bincount(tri_edges.ravel(), minlength=len(edges))
        if np.any(counts > 2):
            raise ValueError("non-manifold edge in triangulation")
        edge_tris = -np.ones((len(edges), 2), dtype=np.int64)
        flat_t = np.repeat(np.arange(len(t)), 3)
        flat_e = tri_edges.ravel()
        flat_s = sign.ravel()
        # slot 0 holds the triangle for which n_e is outward
        for slot_sign, slot in ((1, 0), (-1, 1)):
            m = flat_s == slot_sign
            edge_tris[flat_e[m], slot] = flat_t[m]
        boundary = counts == 1
        # boundary edges keep their single triangle in slot 0
        lone = boundary & (edge_tris[:, 0] < 0)
        edge_tris[lone, 0] = edge_tris[lone, 1]
        edge_tris[lone, 1] = -1

        for name, val in (("edges", edges), ("tri_edges", tri_edges),
                          ("tri_edge_sign", sign), ("edge_tris", edge_tris),
                          ("boundary_edge", boundary)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        v.setflags(write=False)
        t.setflags(write=False)

    # -- sizes ---------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    # -- geometry ------------------------------------------------------
    @property
    def areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.triangles)

    @property
    def edge_vectors(self) -> np.ndarray:
        p = self.vertices
        return p[self.edges[:, 1]] - p[self.edges[:, 0]]

    @property
    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.edge_vectors, axis=1)

    @property
    def edge_tangents(self) -> np.ndarray:
        d = self.edge_vectors
        return d / np.linalg.norm(d, axis=1)[:, None]

    @property
    def edge_normals(self) -> np.ndarray:
        t = self.edge_tangents
        return np.stack([t[:, 1], -t[:, 0]], axis=1)

    @property
    def outward_edge_normals(self) -> np.ndarray:
        """Normals of boundary edges flipped to point out of the domain.

        Interior edges keep ``n_e``.
        """
        n = self.edge_normals.copy()
        bt = self.edge_tris[:, 0]
        b = np.flatnonzero(self.boundary_edge)
        # sign of n_e relative to the unique adjacent triangle
        s = np.ones(self.n_edges)
        k = np.argmax(self.tri_edges[bt[b]] == b[:, None], axis=1)
        s[b] = self.tri_edge_sign[bt[b], k]
        return n * s[:, None]

    @property
    def h(self) -> float:
        """Largest element diameter."""
        return float(self.edge_lengths.max())

    def diameters(self) -> np.ndarray:
        return self.edge_lengths[self.tri_edges].max(axis=1)

    def edge_frame(self, e: int) -> EdgeFrame:
        d = self.edge_vectors[e]
        h = float(np.hypot(d[0], d[1]))
        t = d / h
        return EdgeFrame(t=t, n=np.array([t[1], -t[0]]), h=h)

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edge])

    def vertex_boundary_edges(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for e in np.flatnonzero(self.boundary_edge):
            for a in self.edges[e]:
                out.setdefault(int(a), []).append(int(e))
        return out

    def barycentric_gradients(self) -> np.ndarray:
        """Gradients of the barycentric coordinates, shape (nT, 3, 2)."""
        p = self.vertices[self.triangles]  # (nT, 3, 2)
        area2 = 2.0 * self.areas
        g = np.empty_like(p)
        for k in range(3):
            a, b = p[:, (k + 1) % 3], p[:, (k + 2) % 3]
            d = b - a
            # outward-rotated edge opposite vertex k, scaled
            g[:, k, 0] = -d[:, 1] / area2
            g[:, k, 1] = d[:, 0] / area2
        return g

    def to_physical(self, bary: np.ndarray) -> np.ndarray:
        """Map barycentric points ``(nT, ..., 3)`` or ``(nq, 3)`` to x, y."""
        p = self.vertices[self.triangles]
        if bary.ndim == 2:
            return np.einsum("qa,kad->kqd", bary, p)
        return np.einsum("k...a,kad->k...d", bary, p)

    def write_text(self, path) -> None:
        """Dump as plain text: a vertex block then a triangle block."""
        with open(path, "w") as fh:
            fh.write(f"{self.n_vertices} {self.n_triangles}\n")
            for x, y in self.vertices:
                fh.write(f"{x:.17g} {y:.17g}\n")
            for a, b, c in self.triangles:
                fh.write(f"{a} {b} {c}\n")


def _signed_areas(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    a, b, c = p[t[:, 0]], p[t[:, 1]], p[t[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                  - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def domain_area(domain: str) -> float:
    return {"square": 1.0, "lshape": 3.0}[domain]


def build_initial(domain: str) -> TriMesh:
    """Coarsest mesh of the unit square or the L-shaped domain."""
    if domain == "square":
        p = [(0, 0), (1, 0), (1, 1), (0, 1)]
        t = [(0, 1, 2), (0, 2, 3)]
    elif domain == "lshape":
        p = [(0, 0), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1)]
        t = [
            (0, 1, 2), (0, 2, 3),      # [0,1]^2, diagonal (0,0)-(1,1)
            (3, 4, 5), (3, 5, 0),      # [-1,0]x[0,1], diagonal (0,1)-(-1,0)
            (0, 5, 6), (0, 6, 7),      # [-1,0]^2, diagonal (0,0)-(-1,-1)
        ]
    else:
        raise ValueError(f"unknown domain {domain!r}; expected one of {DOMAINS}")
    return TriMesh(np.array(p, float), np.array(t), level=0, domain=domain)


def refine_red(m: TriMesh) -> TriMesh:
    """Split every triangle into four through its edge midpoints."""
    nv = m.n_vertices
    mid = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
    p = np.vstack([m.vertices, mid])
    v0, v1, v2 = m.triangles.T
    m0, m1, m2 = (nv + m.tri_edges).T
    t = np.stack([
        np.stack([v0, m2, m1], 1),
        np.stack([m2, v1, m0], 1),
        np.stack([m1, m0, v2], 1),
        np.stack([m0, m1, m2], 1),
    ], axis=1).reshape(-1, 3)
    return TriMesh(p, t, level=m.level + 1, domain=m.domain)


def build_mesh(domain: str, mesh_index: int) -> TriMesh:
    """Mesh numbered as in the result tables: 1 is the initial mesh."""
    if mesh_index < 1:
        raise ValueError("mesh index starts at 1")
    m = build_initial(domain)
    for _ in range(mesh_index - 1):
        m = refine_red(m)
    return m


def structured_square(n: int) -> TriMesh:
    """Unit square cut into n x n cells, each split along its (0,0)-(1,1) diagonal."""
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    p = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    t = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return TriMesh(p, t, level=0, domain="square")
