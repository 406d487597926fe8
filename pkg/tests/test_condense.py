import numpy as np
import pytest

from dualmix.condense import (CondensedSolves, condensation_layout, condensed_sizes, local_space_dims,
                              static_condense_solve, _velocity_transform)
from dualmix.forms import ConstitutiveLaw, assemble_system
from dualmix.manufactured import ManufacturedSolution, StokesManufactured
from dualmix.mesh import uniform_square_mesh
from dualmix.solver import solve_navier_stokes, solve_stokes
from dualmix.spaces import ElementFamily, build_spaces
from dualmix.verify import setup_problem

SVRT = ElementFamily("svrt")


@pytest.mark.parametrize("N", [4, 8])
@pytest.mark.parametrize("traction", [True, False])
def test_condensed_matches_uncondensed_navier_stokes(N, traction):
    sys_ = setup_problem(SVRT, uniform_square_mesh(N, traction=traction), ManufacturedSolution())
    full = solve_navier_stokes(sys_)
    cond = static_condense_solve(sys_)
    assert np.abs(full.x - cond.x).max() <= 1e-8
    assert cond.history[-1] <= 1e-10


def test_condensed_matches_uncondensed_stokes():
    sys_ = setup_problem(SVRT, uniform_square_mesh(4, traction=True), StokesManufactured())
    full = solve_stokes(sys_)
    cond = static_condense_solve(sys_, convection=False)
    assert np.abs(full.x - cond.x).max() <= 1e-10


def test_condensed_linear_solve_is_exact(rng):
    sys_ = setup_problem(SVRT, uniform_square_mesh(2), ManufacturedSolution())
    rhs = rng.standard_normal(sys_.n_total)
    rhs[sys_.fixed_global()] = 0
    x = CondensedSolves(sys_)(None, rhs)
    r = (sys_.matrix() @ x - rhs)[sys_.free_global()]
    assert np.abs(r).max() < 1e-10 * np.abs(rhs).max()


def test_condensed_sizes():
    sys_ = setup_problem(SVRT, uniform_square_mesh(4, traction=True), ManufacturedSolution())
    sizes = condensed_sizes(sys_)
    base = uniform_square_mesh(4)
    assert sizes["parents"] == base.n_triangles
    # 6 velocity DOFs per parent plus 4 stress DOFs per parent edge, minus traction edges
    assert sizes["condensed"] == 6 * base.n_triangles + 4 * base.n_edges - 4 * 4
    assert sizes["condensed"] < sizes["uncondensed"] / 3


def test_layout_is_a_partition():
    sys_ = setup_problem(SVRT, uniform_square_mesh(3), ManufacturedSolution())
    lay = condensation_layout(sys_)
    assert np.array_equal(np.sort(lay.gu_perm.ravel()), np.arange(sys_.n_gu))
    assert np.array_equal(np.sort(lay.s_dofs.ravel()), np.arange(sys_.n_s)) or len(np.unique(lay.s_dofs)) == sys_.n_s


def test_velocity_split_is_orthogonal():
    T = _velocity_transform()
    assert np.linalg.matrix_rank(T) == 18
    # child P1 mass matrix on equal-area children (area cancels)
    M1 = (np.ones((3, 3)) + np.eye(3)) / 12
    M = np.kron(np.eye(6), M1)
    cross = T[:, :6].T @ M @ T[:, 6:]
    assert np.abs(cross).max() < 1e-13


def test_local_dims():
    assert local_space_dims() == {"G": 27, "U": 18, "S": 36, "S_sym": 27, "S_bar": 15}


def test_condensation_rejects_other_families():
    sys_ = assemble_system(build_spaces(ElementFamily("afw"), uniform_square_mesh(2)), ConstitutiveLaw(1.0))
    with pytest.raises(ValueError):
        static_condense_solve(sys_)
