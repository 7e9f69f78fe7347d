import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from divdivch.mesh import build_initial, build_mesh, domain_area, refine_red, structured_square, TriMesh


def test_initial_square_counts():
    m = build_initial("square")
    assert (m.n_triangles, m.n_vertices, m.n_edges) == (2, 4, 5)
    assert abs(m.areas.sum() - 1.0) < 1e-12


def test_initial_lshape_counts():
    m = build_initial("lshape")
    assert (m.n_triangles, m.n_vertices, m.n_edges) == (6, 8, 13)
    assert m.n_vertices - m.n_edges + m.n_triangles == 1


def test_one_refinement_counts():
    m = refine_red(build_initial("square"))
    assert (m.n_triangles, m.n_vertices) == (8, 9)
    L = refine_red(build_initial("lshape"))
    assert L.n_triangles == 24
    assert L.n_edges == 2 * 13 + 3 * 6 == 44
    assert L.n_vertices - L.n_edges + L.n_triangles == 1


@given(st.sampled_from(["square", "lshape"]), st.integers(1, 5))
@settings(max_examples=10, deadline=None)
def test_refinement_invariants(domain, level):
    m = build_mesh(domain, level)
    assert abs(m.areas.sum() - domain_area(domain)) < 1e-12
    assert m.n_vertices - m.n_edges + m.n_triangles == 1
    fine = refine_red(m)
    # entity-count recurrence
    assert fine.n_triangles == 4 * m.n_triangles
    assert fine.n_edges == 2 * m.n_edges + 3 * m.n_triangles
    assert fine.n_vertices == m.n_vertices + m.n_edges
    assert math.isclose(fine.h, m.h / 2, rel_tol=1e-12)


def test_level_indexing():
    assert build_mesh("square", 1).n_triangles == 2
    assert build_mesh("square", 3).n_triangles == 32
    with pytest.raises(ValueError):
        build_mesh("square", 0)


def test_edge_frames_rotation_rule():
    m = TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    e = {tuple(v): i for i, v in enumerate(m.edges)}
    i = e[(0, 1)]
    assert np.allclose(m.edge_tangents[i], [1, 0]) and np.allclose(m.edge_normals[i], [0, -1])
    j = e[(0, 2)]
    assert np.allclose(m.edge_tangents[j], [0, 1]) and np.allclose(m.edge_normals[j], [1, 0])


@given(st.sampled_from(["square", "lshape"]), st.integers(1, 4))
@settings(max_examples=8, deadline=None)
def test_frames_orthonormal_and_slot0_outward(domain, level):
    m = build_mesh(domain, level)
    t, n = m.edge_tangents, m.edge_normals
    assert np.all(np.abs((t * n).sum(1)) == 0.0)
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0)
    k = m.edge_tris[:, 0]
    mid = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
    out = ((mid - m.vertices[m.triangles[k]].mean(axis=1)) * n).sum(1)
    # interior: n_e points out of the slot-0 triangle; boundary: see outward normals
    assert np.all(out[~m.boundary_edge] > 0)
    nb = m.outward_edge_normals[m.boundary_edge]
    assert np.all(((mid - m.vertices[m.triangles[k]].mean(axis=1))[m.boundary_edge] * nb).sum(1) > 0)
    assert np.allclose(np.abs((nb * n[m.boundary_edge]).sum(1)), 1.0)
    assert np.all(m.edge_tris[m.boundary_edge, 1] == -1)
    assert np.all(m.edge_tris[~m.boundary_edge, 1] >= 0)


def test_structured_square():
    m = structured_square(20)
    assert (m.n_vertices, m.n_triangles) == (441, 800)
    assert math.isclose(m.h, math.sqrt(2) / 20)
    assert abs(m.areas.sum() - 1.0) < 1e-12


def test_rejects_clockwise():
    with pytest.raises(ValueError):
        TriMesh(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), np.array([[0, 1, 2]]))


def test_write_text(tmp_path):
    m = build_mesh("lshape", 2)
    p = tmp_path / "m.txt"
    m.write_text(p)
    assert p.read_text().count("\n") >= m.n_vertices + m.n_triangles
