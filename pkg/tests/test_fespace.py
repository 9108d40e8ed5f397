import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vkplate.assembly import stiffness_of
from vkplate.errors import InvalidArgumentError, OutOfDomainError, UnsupportedOperationError
from vkplate.fespace import (
    ScalarField,
    build_space,
    eval_field,
    h1_seminorm,
    interpolate,
    max_abs,
    reference_basis,
)
from vkplate.mesh import build_mesh
from vkplate.quadrature import triangle_rule


@pytest.mark.parametrize("degree", [1, 2, 4, 6])
def test_quadrature_exact_on_monomials(degree):
    pts, w = triangle_rule(degree)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            assert w @ (pts[:, 0] ** a * pts[:, 1] ** b) == pytest.approx(exact, rel=1e-12, abs=1e-15)


def test_dof_counts():
    s = build_space(build_mesh(1, 10, 10), 2)
    assert s.n_dofs == 21**2
    assert s.n_interior == 19**2
    s = build_space(build_mesh(1, 1, 1), 1)
    assert (s.n_dofs, s.n_interior) == (4, 0)
    # (2*nx+1)(2*ny+1) lattice points
    s = build_space(build_mesh(2, 2, 1), 2)
    assert (s.n_dofs, s.n_interior) == (15, 3)
    s = build_space(build_mesh(2, 4, 1), 2)
    assert (s.n_dofs, s.n_interior) == (27, 7)
    s = build_space(build_mesh(1, 3, 2), 3)
    assert s.n_dofs == 10 * 7


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_dof_partition_and_boundary(degree):
    s = build_space(build_mesh(1.5, 3, 4), degree)
    both = np.concatenate([s.interior_dofs, s.boundary_dofs])
    assert np.array_equal(np.sort(both), np.arange(s.n_dofs))
    x, y = s.dof_coords[s.boundary_dofs].T
    assert np.all(np.isclose(x, 0) | np.isclose(x, 1.5) | np.isclose(y, 0) | np.isclose(y, 1))
    x, y = s.dof_coords[s.interior_dofs].T
    assert np.all((x > 1e-12) & (x < 1.5 - 1e-12) & (y > 1e-12) & (y < 1 - 1e-12))


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_cell_dofs_match_node_coordinates(degree):
    s = build_space(build_mesh(1, 2, 3), degree)
    _, _, _ = reference_basis(degree, np.array([[0.2, 0.3]]))
    # a field equal to x at every dof evaluates to x inside every element (exact for degree >= 1)
    f = np.array(s.dof_coords[:, 0])
    for t in range(s.mesh.n_triangles):
        tab = s.tabulate(t, hessians=False)
        vals = tab.values @ f[s.cell_dofs[t]]
        assert np.allclose(vals, tab.points[:, 0], atol=1e-13)


def test_unsupported_degree():
    with pytest.raises(InvalidArgumentError):
        build_space(build_mesh(1, 2, 2), 4)


@pytest.mark.parametrize("degree", [2, 3])
def test_tabulate_partition_of_unity(degree):
    s = build_space(build_mesh(1.3, 3, 2), degree)
    for t in range(s.mesh.n_triangles):
        tab = s.tabulate(t)
        assert np.allclose(tab.values.sum(axis=1), 1.0, atol=1e-13)
        assert np.allclose(tab.grads.sum(axis=1), 0.0, atol=1e-12)
        assert np.allclose(tab.hessians.sum(axis=1), 0.0, atol=1e-10)


def test_p2_hessians_constant_per_element(p2_square_small):
    for t in range(p2_square_small.mesh.n_triangles):
        H = p2_square_small.tabulate(t).hessians
        assert np.allclose(H, H[0][None], atol=1e-10)


def test_hessian_of_quadratic_is_exact(p2_square_small):
    s = p2_square_small
    f = lambda x, y: 0.5 * x * x - 3 * x * y + 2 * y * y  # noqa: E731
    full = f(*s.dof_coords.T)
    tab = s.tabulate_all()
    H = np.einsum("tb,tqbk->tqk", full[s.cell_dofs], tab.hessians)
    assert np.allclose(H[..., 0], 1.0)
    assert np.allclose(H[..., 1], -3.0)
    assert np.allclose(H[..., 2], 4.0)


def test_tabulate_hessians_require_degree_two():
    s = build_space(build_mesh(1, 2, 2), 1)
    with pytest.raises(UnsupportedOperationError):
        s.tabulate(0)
    assert s.tabulate(0, hessians=False).hessians is None


def test_interpolate_and_max_abs():
    s = build_space(build_mesh(1, 10, 10), 2)
    z = interpolate(s, lambda x, y: 0 * x)
    assert not z.coeffs.any()
    assert h1_seminorm(z) == 0.0
    assert max_abs(z)[0] == 0.0
    f = interpolate(s, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    assert eval_field(f, (0.5, 0.5)) == pytest.approx(1.0, abs=1e-14)
    val, dof = max_abs(f)
    assert val == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(s.dof_coords[dof], (0.5, 0.5))
    val3, dof3 = max_abs(-3 * f)
    assert val3 == pytest.approx(-3.0) and dof3 == dof


def test_h1_seminorm_converges_to_analytic_value():
    # f = x(1-x)y(1-y): |f|_1^2 = 2 * (1/3) * (1/30) = 1/45
    exact = math.sqrt(1 / 45)
    errs = []
    for n in (4, 8, 16):
        s = build_space(build_mesh(1, n, n), 2)
        f = interpolate(s, lambda x, y: x * (1 - x) * y * (1 - y))
        errs.append(abs(h1_seminorm(f) - exact))
    assert errs[2] < errs[1] < errs[0]
    assert errs[2] < 1e-4


def test_h1_seminorm_matches_quadrature(p2_square_small, rng):
    s = p2_square_small
    f = ScalarField(s, rng.standard_normal(s.n_interior))
    tab = s.tabulate_all(quad_degree=6, hessians=False)
    g = np.einsum("tb,tqbk->tqk", f.full_coeffs()[s.cell_dofs], tab.grads)
    direct = np.sum(tab.weights * (g**2).sum(axis=-1))
    assert h1_seminorm(f) ** 2 == pytest.approx(direct, rel=1e-10)


def test_eval_outside_domain(p2_square_small):
    f = ScalarField(p2_square_small, np.ones(p2_square_small.n_interior))
    with pytest.raises(OutOfDomainError):
        eval_field(f, (1.2, 0.5))
    with pytest.raises(OutOfDomainError):
        eval_field(f, (0.5, -0.1))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_interpolate_reproduces_fe_functions(seed):
    s = build_space(build_mesh(1.7, 3, 4), 2)
    rng = np.random.default_rng(seed)
    f = ScalarField(s, rng.standard_normal(s.n_interior))
    g = interpolate(s, np.vectorize(lambda x, y: eval_field(f, (x, y))))
    assert np.allclose(g.coeffs, f.coeffs, atol=1e-12)


def test_coefficient_length_checked(p2_square_small):
    with pytest.raises(InvalidArgumentError):
        ScalarField(p2_square_small, np.zeros(3))
