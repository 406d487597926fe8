import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dualmix.mesh import (DIRICHLET, INTERIOR, TRACTION, MacroElement, Triangulation, affine_image,
                          barycentric_refine, centroid_collinearity_margin, collinearity_margin,
                          extract_macroelements, perturbed_square_mesh, read_mesh, uniform_square_mesh,
                          write_mesh)


def cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def brute_force_edges(mesh):
    edges = set()
    for a, b, c in mesh.triangles:
        for p, q in ((a, b), (b, c), (c, a)):
            edges.add((min(p, q), max(p, q)))
    return edges


def test_smallest_mesh_counts():
    m = uniform_square_mesh(1)
    assert (m.n_triangles, m.n_vertices, m.n_edges) == (2, 4, 5)


def test_n8_counts_and_euler():
    m = uniform_square_mesh(8)
    assert m.n_triangles == 128 and m.n_vertices == 81
    assert len(brute_force_edges(m)) == m.n_edges == 208
    assert m.n_vertices - m.n_edges + m.n_triangles == 1


@pytest.mark.parametrize("N", [1, 3, 8, 17])
def test_mesh_size_is_diagonal(N):
    assert uniform_square_mesh(N).mesh_size() == pytest.approx(np.sqrt(2) * 2 / N, rel=1e-15)


def test_invariants(rng):
    for m in (uniform_square_mesh(5), perturbed_square_mesh(6, 0.2, rng)):
        m.check()
        assert np.all(m.signed_areas() > 0)
        counts = np.bincount(m.tri_edges.ravel())
        assert np.all(counts[m.edge_tags == INTERIOR] == 2)
        assert np.all(counts[m.edge_tags != INTERIOR] == 1)
        assert np.all(m.edges[:, 0] < m.edges[:, 1])


def test_normals_are_clockwise_rotations():
    m = uniform_square_mesh(3)
    t = m.vertices[m.edges[:, 1]] - m.vertices[m.edges[:, 0]]
    n = m.edge_normals()
    assert np.allclose(cross(t, n), -np.linalg.norm(t, axis=1))


def test_traction_tagging():
    m = uniform_square_mesh(4, traction=True)
    mid = m.edge_midpoints()
    tr = m.boundary_edges(TRACTION)
    assert len(tr) == 4 and np.allclose(mid[tr, 0], 1.0)
    assert len(m.boundary_edges(DIRICHLET)) == 12


def test_refinement_counts():
    m = uniform_square_mesh(1)
    r = barycentric_refine(m)
    assert (r.n_triangles, r.n_vertices) == (6, 6)
    r8 = barycentric_refine(uniform_square_mesh(8))
    assert (r8.n_triangles, r8.n_vertices) == (384, 209)
    assert np.array_equal(r8.parent, np.repeat(np.arange(128), 3))


def test_refinement_keeps_boundary_tags():
    m = uniform_square_mesh(3, traction=True)
    r = barycentric_refine(m)
    assert len(r.boundary_edges(TRACTION)) == len(m.boundary_edges(TRACTION))


coords = st.floats(-10, 10, allow_nan=False)


@given(st.lists(st.tuples(coords, coords), min_size=3, max_size=3))
def test_children_have_positive_area(pts):
    p = np.array(pts)
    area = 0.5 * cross(p[1] - p[0], p[2] - p[0])
    scale = max(np.ptp(p, axis=0).max(), 1e-3)
    if abs(area) < 1e-3 * scale**2:
        return
    if area < 0:
        p = p[[0, 2, 1]]
    m = Triangulation.from_triangles(p, np.array([[0, 1, 2]]))
    r = barycentric_refine(m)
    assert np.all(r.signed_areas() > 0)
    assert r.signed_areas().sum() == pytest.approx(m.signed_areas()[0], rel=1e-13)


def test_vertex_patches():
    patches = extract_macroelements(uniform_square_mesh(2), "vertex")
    # all diagonals run the same way, so the centre vertex touches 6 triangles
    assert len(patches) == 1 and len(patches[0].triangles) == 6
    assert extract_macroelements(uniform_square_mesh(1), "vertex") == []


def test_vertex_patch_of_n2_has_all_triangles_at_centre():
    m = uniform_square_mesh(2)
    (p,) = extract_macroelements(m, "vertex")
    assert np.allclose(m.vertices[p.anchor], 0.0)
    brute = [t for t in range(m.n_triangles) if p.anchor in m.triangles[t]]
    assert list(p.triangles) == brute


def test_facet_patch_count_matches_brute_force():
    m = uniform_square_mesh(4)
    patches = extract_macroelements(m, "facet")
    brute = 0
    for t in range(m.n_triangles):
        neighbours = [s for s in range(m.n_triangles) if s != t and len(set(m.triangles[s]) & set(m.triangles[t])) == 2]
        brute += len(neighbours) == 3
    assert len(patches) == brute
    assert all(len(p.triangles) == 4 for p in patches)


def test_parent_patches_need_refinement():
    with pytest.raises(ValueError):
        extract_macroelements(uniform_square_mesh(2), "parent")
    r = barycentric_refine(uniform_square_mesh(2))
    assert len(extract_macroelements(r, "parent")) == 8


def reference_configuration():
    # K0 = (0,0), (-3,0), (0,-3) with one neighbour across each edge
    verts = np.array([[0, 0], [-3, 0], [0, -3], [-3, -3], [1, -2], [-2, 1]], float)
    tris = np.array([[0, 1, 2], [1, 3, 2], [0, 2, 4], [0, 5, 1]])
    return Triangulation.from_triangles(verts, tris)


def test_reference_configuration_margin():
    m = reference_configuration()
    assert np.all(m.signed_areas() > 0)
    (p,) = extract_macroelements(m, "facet")
    assert p.anchor == 0
    assert centroid_collinearity_margin(p, m) > 0.1


def test_collinear_points_have_zero_margin():
    pts = np.array([[0, 0], [1, 1], [2, 2], [-5, -5]], float)
    assert collinearity_margin(pts) == pytest.approx(0.0, abs=1e-14)


def test_margin_rejects_wrong_patch_size():
    m = uniform_square_mesh(2)
    with pytest.raises(ValueError):
        centroid_collinearity_margin(MacroElement("facet", (0, 1, 2), 0), m)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.3))
def test_random_facet_patch_margins_positive(seed, amp):
    m = perturbed_square_mesh(4, amp, np.random.default_rng(seed))
    for p in extract_macroelements(m, "facet"):
        assert centroid_collinearity_margin(p, m) > 0


@given(st.floats(0.2, 3), st.floats(-2, 2), st.floats(0.2, 3), st.floats(-5, 5), st.floats(-5, 5))
def test_affine_invariance(a, b, d, tx, ty):
    A = np.array([[a, b], [0.0, d]])
    m = uniform_square_mesh(3)
    img = affine_image(m, A, [tx, ty])
    for kind in ("vertex", "facet"):
        assert extract_macroelements(img, kind) == extract_macroelements(m, kind)
    for p in extract_macroelements(m, "facet"):
        assert (centroid_collinearity_margin(p, img) > 1e-12) == (centroid_collinearity_margin(p, m) > 1e-12)


def test_affine_image_rejects_reflections():
    with pytest.raises(ValueError):
        affine_image(uniform_square_mesh(1), [[-1, 0], [0, 1]], [0, 0])


def test_write_read_roundtrip():
    m = uniform_square_mesh(3, traction=True)
    buf = io.StringIO()
    write_mesh(m, buf)
    header = buf.getvalue().splitlines()[0]
    assert header == f"{m.n_triangles} {m.n_vertices} {m.n_edges}"
    back = read_mesh(io.StringIO(buf.getvalue()))
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.edge_tags, m.edge_tags)


def test_invalid_n():
    with pytest.raises(ValueError):
        uniform_square_mesh(0)
