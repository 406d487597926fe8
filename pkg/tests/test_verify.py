import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualmix.manufactured import ManufacturedSolution
from dualmix.mesh import uniform_square_mesh
from dualmix.solver import SolutionFields
from dualmix.spaces import ElementFamily
from dualmix.verify import (COLUMNS, ConvergenceReport, convergence_study, error_norms, exact_norms,
                            fit_rate, setup_problem)

EXACT = ManufacturedSolution()
NORMS = np.array([2.776802, 2.776802, 1.118034, 0.905688, 0.927988])


def test_exact_norms_match_table():
    assert np.abs(exact_norms(EXACT) - NORMS).max() < 1e-4


def test_velocity_norm_is_analytic():
    # |u|^2 integrates to ((m/k)^2 + 1) over (-1, 1)^2 for k = pi, m = pi/2
    assert exact_norms(EXACT)[2] == pytest.approx(np.sqrt(5) / 2, abs=1e-10)


def test_exact_norms_converge_in_quadrature():
    a, b = exact_norms(EXACT, N=16), exact_norms(EXACT, N=64)
    assert np.abs(a - b).max() < 1e-8


def test_gradient_parts_have_equal_norm():
    n = exact_norms(EXACT)
    assert n[0] == pytest.approx(n[1], rel=1e-10)


class _Zero:
    nu = EXACT.nu

    def grad_u(self, x):
        return np.zeros(x.shape[:-1] + (2, 2))

    def u(self, x):
        return np.zeros(x.shape[:-1] + (2,))

    S = grad_u
    div_S = u


def _zero_fields(tag="afw", N=4):
    sys_ = setup_problem(ElementFamily.parse(tag), uniform_square_mesh(N, traction=True), EXACT)
    return SolutionFields(sys_, np.zeros(sys_.n_total))


def test_error_norms_zero_for_zero_pair():
    assert np.all(error_norms(_zero_fields(), _Zero()) == 0)


@pytest.mark.parametrize("tag", ["afw", "svrt1"])
def test_error_of_zero_field_is_exact_norm(tag):
    errs = error_norms(_zero_fields(tag, 8), EXACT)
    assert np.abs(errs - exact_norms(EXACT, N=8)).max() < 1e-10


@given(st.floats(0.1, 3.0), st.floats(-5, 5))
def test_fit_rate_recovers_power_law(p, c):
    h = 2.0 / np.array([4, 8, 16, 32])
    E = np.exp(c) * h[:, None] ** np.array([p, 2 * p])
    assert np.allclose(fit_rate(h, E), [p, 2 * p], atol=1e-10)


def test_fit_rate_is_invariant_to_scaling(rng):
    h = 2.0 / np.array([4, 8, 16])
    E = rng.uniform(0.5, 2.0, size=(3, 5)) * h[:, None]
    assert np.allclose(fit_rate(h, E), fit_rate(h, 7.0 * E))


def test_report_rows_and_window():
    h = np.array([0.5, 0.25, 0.125])
    E = np.stack([h, h**2, h, h, h], axis=1)
    rep = ConvergenceReport("afw", h, E, NORMS, (0.125, 0.25))
    rows = rep.rows()
    assert [r[0] for r in rows] == ["5.00000e-01", "2.50000e-01", "1.25000e-01", "norm", "rate"]
    assert np.allclose(rep.rates, [1, 2, 1, 1, 1])
    assert len(COLUMNS) == 5


def test_study_rejects_unsorted_meshes():
    with pytest.raises(ValueError):
        convergence_study(ElementFamily.parse("afw"), [4, 2])


def test_afw_coarse_row_matches_table():
    rep = convergence_study(ElementFamily.parse("afw"), [8])
    reference = np.array([6.883930e-01, 6.544852e-01, 2.312414e-01, 1.505661e-01, 2.405736e-01])
    assert np.all(np.abs(rep.errors[0] / reference - 1) < 0.05)


def test_study_on_shifted_domain():
    rep = convergence_study(ElementFamily.parse("afw"), [2, 4], domain=(0.0, 2.0, 0.0, 2.0))
    assert np.allclose(rep.h, [1.0, 0.5])
    assert np.all(np.isfinite(rep.errors))
