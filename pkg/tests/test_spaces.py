import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from dualmix.condense import local_space_dims
from dualmix.forms import assemble_b, assemble_mean_trace
from dualmix.mesh import LOCAL_EDGES, barycentric_refine, extract_macroelements, perturbed_square_mesh, uniform_square_mesh
from dualmix.quadrature import edge_rule, triangle_rule
from dualmix.spaces import (ElementFamily, SSpace, build_G_space, build_S_space, build_spaces, build_U_space,
                            skw)
from dualmix.stability import _patch_spaces, patch_mesh

FAMILIES = ["peers", "afw", "svrt1"]
PEERS, AFW, SVRT = (ElementFamily.parse(t) for t in FAMILIES)


def test_dof_counts_n8():
    m = uniform_square_mesh(8)
    r = barycentric_refine(m)
    assert build_G_space(AFW, m).ndof == 896
    assert build_G_space(PEERS, m).ndof == 6 * 128 + 81
    assert build_G_space(SVRT, r).ndof == 9 * 384
    assert build_U_space(AFW, m).ndof == 256
    assert build_U_space(SVRT, r).ndof == 2304
    assert build_S_space(AFW, m).ndof == 832
    assert build_S_space(PEERS, m).ndof == 2 * (208 + 128)
    assert build_S_space(SVRT, r).ndof == 2 * (2 * r.n_edges + 2 * 384)


def test_composite_needs_refined_mesh():
    m = uniform_square_mesh(2)
    for build in (build_G_space, build_U_space, build_S_space):
        with pytest.raises(ValueError):
            build(SVRT, m)


def test_traction_edges_must_be_boundary():
    m = uniform_square_mesh(2)
    inner = np.flatnonzero(m.edge_tags == 0)[:1]
    with pytest.raises(ValueError):
        build_S_space(AFW, m, traction_edges=inner)


def test_mean_trace_constraint_only_without_traction():
    assert build_S_space(AFW, uniform_square_mesh(2)).mean_trace_constraint
    assert not build_S_space(AFW, uniform_square_mesh(2, traction=True)).mean_trace_constraint


def test_family_parsing():
    assert ElementFamily.parse("SVRT1") == SVRT
    assert SVRT.tag == "svrt1"
    with pytest.raises(ValueError):
        ElementFamily.parse("taylor-hood")
    with pytest.raises(ValueError):
        ElementFamily("svrt", 2)


@pytest.mark.parametrize("fam", FAMILIES)
def test_gradients_are_trace_free(fam, rng):
    sp_ = build_spaces(ElementFamily.parse(fam), perturbed_square_mesh(3, 0.2, rng))
    geom = sp_.G.geometry()
    lam = rng.dirichlet(np.ones(3), size=7)
    vals = sp_.G.tabulate(geom, geom.points(lam))[0]
    assert np.abs(np.trace(vals, axis1=-2, axis2=-1)).max() < 1e-14


@pytest.mark.parametrize("fam", FAMILIES)
def test_transpose_closure(fam, rng):
    sp_ = build_spaces(ElementFamily.parse(fam), uniform_square_mesh(2))
    G = sp_.G
    c = rng.standard_normal(G.ndof)
    geom = G.geometry()
    x = geom.points(rng.dirichlet(np.ones(3), size=5))
    a = G.evaluate(c, geom, x)
    b = G.evaluate(G.transpose_coeffs(c), geom, x)
    assert np.allclose(b, np.swapaxes(a, -1, -2), atol=1e-14)


@pytest.mark.parametrize("fam", ["afw", "svrt1"])
def test_constant_velocity_reproduced(fam, rng):
    sp_ = build_spaces(ElementFamily.parse(fam), uniform_square_mesh(2))
    U = sp_.U
    v = rng.standard_normal(2)
    local = v if U.degree == 0 else np.repeat(v, 3)
    c = np.tile(local, sp_.mesh.n_triangles)
    geom = U.geometry()
    vals = U.evaluate(c, geom, geom.points(triangle_rule(6).points))
    assert np.allclose(vals, v, atol=1e-15)


def normal_jumps(S, coeffs):
    mesh = S.mesh
    rule = edge_rule(3)
    out = []
    for e in np.flatnonzero(mesh.edge_tags == 0):
        a, b = mesh.vertices[mesh.edges[e]]
        x = a + rule.points[:, None] * (b - a)
        n = mesh.edge_normals()[e]
        sides = [S.evaluate(coeffs, S.geometry([t]), x[None])[0] @ n for t in mesh.edge_tris[e]]
        out.append(np.abs(sides[0] - sides[1]).max())
    return np.array(out)


@pytest.mark.parametrize("fam", FAMILIES)
def test_normal_trace_continuity(fam, rng):
    sp_ = build_spaces(ElementFamily.parse(fam), perturbed_square_mesh(3, 0.25, rng))
    c = rng.standard_normal(sp_.S.ndof)
    assert normal_jumps(sp_.S, c).max() < 1e-12


@pytest.mark.parametrize("fam", FAMILIES)
def test_divergence_matches_finite_differences(fam, rng):
    sp_ = build_spaces(ElementFamily.parse(fam), perturbed_square_mesh(2, 0.2, rng))
    S = sp_.S
    geom = S.geometry()
    x = geom.points(rng.dirichlet(np.ones(3) * 3, size=4))
    eps = 1e-6
    _, div = S.tabulate_rows(geom, x)
    fd = 0.0
    for d in range(2):
        e = np.zeros(2)
        e[d] = eps
        vp = S.tabulate_rows(geom, x + e)[0][..., d]
        vm = S.tabulate_rows(geom, x - e)[0][..., d]
        fd = fd + (vp - vm) / (2 * eps)
    assert np.abs(fd - div).max() < 1e-6 * max(1.0, np.abs(div).max())


@pytest.mark.parametrize("fam,degree", [("peers", 0), ("afw", 0), ("svrt1", 1)])
def test_divergence_degree(fam, degree, rng):
    sp_ = build_spaces(ElementFamily.parse(fam), perturbed_square_mesh(2, 0.2, rng))
    S = sp_.S
    geom = S.geometry()
    lam = rng.dirichlet(np.ones(3), size=12)
    x = geom.points(lam)
    _, div = S.tabulate_rows(geom, x)  # (nc, nq, nloc)
    if degree == 0:
        basis = np.ones((12, 1))
    else:
        basis = lam
    for c in range(len(geom.cells)):
        coef, *_ = np.linalg.lstsq(basis, div[c], rcond=None)
        assert np.abs(basis @ coef - div[c]).max() < 1e-10 * max(1.0, np.abs(div[c]).max())


def test_composite_local_dimensions():
    dims = local_space_dims()
    assert (dims["G"], dims["U"], dims["S"]) == (27, 18, 36)
    assert dims["S_bar"] == 15
    assert dims["S_sym"] == 27


def p2_gradient(mesh, vertex_vals, edge_vals, geom, lam):
    """Gradient of the continuous P2 function with the given nodal values."""
    nodal = np.concatenate([vertex_vals[mesh.triangles[geom.cells]], edge_vals[mesh.tri_edges[geom.cells]]], axis=1)
    l0, l1, l2 = lam[:, 0], lam[:, 1], lam[:, 2]
    z = np.zeros_like(l0)
    # d basis_j / d lam_i, basis ordered vertices then edges opposite vertex 0, 1, 2
    dphi = np.stack([
        np.stack([4 * l0 - 1, z, z], -1), np.stack([z, 4 * l1 - 1, z], -1), np.stack([z, z, 4 * l2 - 1], -1),
        np.stack([z, 4 * l2, 4 * l1], -1), np.stack([4 * l2, z, 4 * l0], -1), np.stack([4 * l1, 4 * l0, z], -1),
    ], axis=1)  # (nq, 6, 3)
    return np.einsum("cj,qji,cid->cqd", nodal, dphi, geom.grad_bary)


def test_curl_of_continuous_quadratics_in_composite_space(rng):
    mesh = barycentric_refine(perturbed_square_mesh(2, 0.2, rng))
    S = SSpace(SVRT, mesh, "rt1")
    rule = triangle_rule(6)
    geom = S.geometry()
    x = geom.points(rule.points)
    w = geom.area[:, None] * rule.weights
    rv, _ = S.tabulate_rows(geom, x)
    g = p2_gradient(mesh, rng.standard_normal(mesh.n_vertices), rng.standard_normal(mesh.n_edges), geom, rule.points)
    curl = np.stack([-g[..., 1], g[..., 0]], axis=-1)
    nrow = S.nrow
    M = np.zeros((nrow, nrow))
    b = np.zeros(nrow)
    for c in range(mesh.n_triangles):
        d = S.row_dofs[c]
        M[np.ix_(d, d)] += np.einsum("qia,qja,q->ij", rv[c], rv[c], w[c])
        b[d] += np.einsum("qia,qa,q->i", rv[c], curl[c], w[c])
    norm2 = np.einsum("cqa,cqa,cq->", curl, curl, w)
    residual = norm2 - b @ np.linalg.solve(M, b)
    assert residual < 1e-10 * norm2


def test_divergence_free_weakly_symmetric_composite_stresses_are_symmetric(rng):
    mesh = barycentric_refine(perturbed_square_mesh(1, 0.0, rng))
    patch = extract_macroelements(mesh, "parent")[0]
    sub, _ = patch_mesh(mesh, patch)
    G, U, S = _patch_spaces(SVRT, sub)
    B = assemble_b(S, G, U).toarray()
    skew_cols = np.unique(G.cell_dofs[:, G.local_kind == 1])
    cols = np.concatenate([skew_cols, G.ndof + np.arange(U.ndof)])
    Z = sla.null_space(B[:, cols].T, rcond=1e-10)
    assert Z.shape[1] > 0
    geom = S.geometry()
    x = geom.points(triangle_rule(6).points)
    for z in Z.T:
        vals = S.evaluate(z, geom, x)
        assert np.abs(skw(vals)).max() < 1e-10 * np.abs(vals).max()


@pytest.mark.parametrize("fam", FAMILIES)
def test_mean_trace_functional_is_exact(fam, rng):
    sp_ = build_spaces(ElementFamily.parse(fam), perturbed_square_mesh(2, 0.2, rng))
    assert np.allclose(assemble_mean_trace(sp_.S), assemble_mean_trace(sp_.S, degree=12), atol=1e-14)


@given(st.sampled_from(FAMILIES), st.integers(0, 2**31))
def test_interpolating_a_constant_tensor_is_exact(fam, seed):
    rng = np.random.default_rng(seed)
    T = rng.standard_normal((2, 2))
    sp_ = build_spaces(ElementFamily.parse(fam), uniform_square_mesh(2))
    c = sp_.S.interpolate(lambda x: np.broadcast_to(T, x.shape[:-1] + (2, 2)))
    geom = sp_.S.geometry()
    vals = sp_.S.evaluate(c, geom, geom.points(rng.dirichlet(np.ones(3), size=4)))
    assert np.allclose(vals, T, atol=1e-12)
