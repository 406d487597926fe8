import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualmix.mesh import (affine_image, barycentric_refine, extract_macroelements, perturbed_square_mesh,
                          uniform_square_mesh)
from dualmix.spaces import ElementFamily, build_spaces
from dualmix.stability import (MACRO_KIND, EmptyKernelError, StabilityReport, broken_triple,
                               check_mean_trace, gram_matrix, infsup_constant, korn_constant,
                               macroelement_kernel_dim, patch_mesh, stability_study,
                               trace_equivalence_constants)

FAMILIES = ["peers", "afw", "svrt1"]


def _spaces(tag, N=2, traction=False):
    return build_spaces(ElementFamily.parse(tag), uniform_square_mesh(N, traction=traction))


@pytest.mark.parametrize("tag", FAMILIES)
def test_eigen_methods_agree(tag):
    sp_ = _spaces(tag)
    G, U, S = sp_.G, sp_.U, sp_.S
    dense = infsup_constant(G, U, S, "dense")
    for method in ("sparse", "power"):
        assert infsup_constant(G, U, S, method) == pytest.approx(dense, rel=1e-8)
    kd = korn_constant(G, U, S, "dense")
    for method in ("sparse", "power"):
        assert korn_constant(G, U, S, method) == pytest.approx(kd, rel=1e-8)
    lo, hi = trace_equivalence_constants(S, "dense")
    for method in ("sparse", "power"):
        lo2, hi2 = trace_equivalence_constants(S, method)
        assert lo2 == pytest.approx(lo, rel=1e-8)
        assert hi2 == pytest.approx(hi, rel=1e-8)


def test_unknown_method_rejected():
    sp_ = _spaces("afw")
    with pytest.raises(ValueError):
        infsup_constant(sp_.G, sp_.U, sp_.S, "lanczos")


@pytest.mark.parametrize("tag", FAMILIES)
def test_constants_invariant_under_translation(tag):
    fam = ElementFamily.parse(tag)
    base = uniform_square_mesh(2)
    moved = affine_image(base, np.eye(2), [3.5, -1.25])
    a, b = build_spaces(fam, base), build_spaces(fam, moved)
    assert infsup_constant(a.G, a.U, a.S) == pytest.approx(infsup_constant(b.G, b.U, b.S), rel=1e-9)
    assert korn_constant(a.G, a.U, a.S) == pytest.approx(korn_constant(b.G, b.U, b.S), rel=1e-9)


@pytest.mark.parametrize("tag", FAMILIES)
def test_constants_are_positive_and_finite(tag):
    sp_ = _spaces(tag)
    beta = infsup_constant(sp_.G, sp_.U, sp_.S)
    C = korn_constant(sp_.G, sp_.U, sp_.S)
    assert 0.1 < beta < 1.0
    assert 0.5 < C < 5.0


def test_traction_edges_give_a_constant_too():
    sp_ = _spaces("afw", traction=True)
    assert not sp_.S.mean_trace_constraint
    assert infsup_constant(sp_.G, sp_.U, sp_.S) > 0.1


@pytest.mark.parametrize("tag", FAMILIES)
def test_trace_equivalence_bounds(tag):
    lo, hi = trace_equivalence_constants(_spaces(tag).S)
    assert 0 < lo < 1
    assert hi == pytest.approx(1.0, abs=1e-8)


def test_trace_equivalence_needs_constraint():
    with pytest.raises(ValueError):
        trace_equivalence_constants(_spaces("afw", traction=True).S)


def test_mean_trace_check_rejects_identity():
    S = _spaces("afw").S
    ident = S.interpolate(lambda x: np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)))
    with pytest.raises(ValueError):
        check_mean_trace(S, 0.3 * ident)
    dev = S.interpolate(lambda x: np.broadcast_to(np.diag([1.0, -1.0]), x.shape[:-1] + (2, 2)))
    assert np.array_equal(check_mean_trace(S, dev), dev)


def test_gram_parts_split_the_full_matrix():
    G = _spaces("afw").G
    full = gram_matrix(G)
    assert abs(full - gram_matrix(G, "sym") - gram_matrix(G, "skw")).max() < 1e-13
    with pytest.raises(ValueError):
        gram_matrix(G, "div")


def test_korn_of_trivial_kernel():
    # one triangle, no interior: b has full column rank on the stresses
    sp_ = _spaces("peers", N=1)
    try:
        C = korn_constant(sp_.G, sp_.U, sp_.S, "dense")
    except EmptyKernelError:
        return
    assert np.isfinite(C) or C == float("inf")


def test_broken_korn_grows():
    Cs = [korn_constant(*(lambda t: (t.G, t.U, t.S))(broken_triple(uniform_square_mesh(N)))) for N in (2, 4, 8)]
    assert Cs[0] < Cs[1] < Cs[2]
    assert Cs[2] > 1.6 * Cs[1]


def test_report_ratio():
    assert StabilityReport.ratio([1.0, 0.9, 0.95]) == pytest.approx(0.9)
    assert StabilityReport.ratio([1.0, np.inf]) == 0.0


def test_stability_study_small():
    rep = stability_study(ElementFamily.parse("afw"), [2, 4])
    assert len(rep.rows()) == 2
    assert rep.stable
    assert all(d == [1] for d in rep.macro_dims)


# -- macroelements -----------------------------------------------------------------------

def _random_patches(tag, rng, count):
    fam = ElementFamily.parse(tag)
    mesh = perturbed_square_mesh(6, 0.25, rng)
    if fam.name == "svrt":
        mesh = barycentric_refine(mesh)
    patches = extract_macroelements(mesh, MACRO_KIND[fam.name])
    pick = rng.choice(len(patches), size=min(count, len(patches)), replace=False)
    return fam, mesh, [patches[i] for i in pick]


@pytest.mark.parametrize("tag", FAMILIES)
def test_macroelement_kernel_is_identity(tag, rng):
    fam, mesh, patches = _random_patches(tag, rng, 20)
    assert len(patches) == 20
    for p in patches:
        k = macroelement_kernel_dim(fam, p, mesh)
        assert k.dimension == 1
        assert k.proportional_to_identity
        assert k.classification == ["identity"]


def test_peers_without_skew_constraint_has_larger_kernel(rng):
    fam, mesh, patches = _random_patches("peers", rng, 5)
    for p in patches:
        k = macroelement_kernel_dim(fam, p, mesh, drop_skew=True)
        assert k.dimension >= 2
        assert "other" in k.classification


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_facet_patch_kernel_on_perturbed_meshes(seed):
    rng = np.random.default_rng(seed)
    fam, mesh, patches = _random_patches("afw", rng, 1)
    assert macroelement_kernel_dim(fam, patches[0], mesh).dimension == 1


def test_patch_mesh_keeps_geometry():
    mesh = uniform_square_mesh(3)
    p = extract_macroelements(mesh, "vertex")[0]
    sub, verts = patch_mesh(mesh, p)
    assert sub.n_triangles == len(p.triangles)
    assert np.isclose(sub.signed_areas().sum(), mesh.signed_areas()[list(p.triangles)].sum())
    assert p.anchor in verts
