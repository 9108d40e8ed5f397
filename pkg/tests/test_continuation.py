import numpy as np
import pytest

from vkplate.continuation import (
    BranchSeed,
    ordinate,
    rectangle_seeds,
    square_seeds,
    sweep_2d,
    sweep_diagram,
    trace_branch,
)
from vkplate.eigen import buckling_eigs
from vkplate.errors import InvalidArgumentError
from vkplate.fespace import build_space
from vkplate.mesh import build_mesh

DELTA = 1e-4


@pytest.fixture(scope="module")
def square_pair(p2_square):
    seeds = [BranchSeed((1, 1)), BranchSeed((1, 1), sign=-1)]
    return sweep_diagram(p2_square, (35.0, 45.0), 0.5, 0.0, seeds)


def test_seed_validation():
    with pytest.raises(InvalidArgumentError):
        BranchSeed((1, 1), amplitude=0.0)
    with pytest.raises(InvalidArgumentError):
        BranchSeed((1, 1), sign=2)
    with pytest.raises(InvalidArgumentError):
        BranchSeed((0, 1))
    assert BranchSeed((2, 1), sign=-1).label == "(2,1,-)"


def test_seed_lift(p2_square_small):
    st = BranchSeed((1, 1), amplitude=0.5, sign=-1).lift(p2_square_small)
    assert ordinate(st.u) == pytest.approx(-0.5)
    for f in (st.U, st.phi, st.Phi):
        assert not f.coeffs.any()


def test_seed_sets():
    assert len(square_seeds()) == 4
    assert {s.mode for s in rectangle_seeds()} == {(1, 1), (2, 1), (3, 1), (4, 1)}
    assert len(rectangle_seeds()) == 8


def test_first_branch_shape(square_pair):
    b = square_pair.branches[0]
    lam, ords = b.lambdas, b.ordinates
    assert np.all(np.diff(lam) > 0)
    assert all(p.converged for p in b.points)
    assert np.all(np.abs(ords[lam <= 39.0]) < DELTA)
    post = ords[lam >= 40.0]
    assert np.all(post > DELTA)
    assert np.all(np.diff(post) > 0)


def test_detected_bifurcation(square_pair, p2_square):
    lam1 = buckling_eigs(p2_square, k=1)[0].value
    assert len(square_pair.detected_bifurcations) == 2
    for _, lam_star in square_pair.detected_bifurcations:
        assert 39.0 <= lam_star <= 40.0
        assert abs(lam_star - lam1) <= 0.5


def test_negated_seed_gives_negated_branch(square_pair):
    a, b = square_pair.branches
    assert np.allclose(a.ordinates, -b.ordinates, atol=1e-8, rtol=0)


def test_nontrivial_count(square_pair):
    assert square_pair.nontrivial_at(45.0) == 2
    assert square_pair.nontrivial_at(37.0) == 0
    assert square_pair.trivial_branch[0] == (35.0, 0.0)


def test_state_storage_every_fifth(square_pair):
    b = square_pair.branches[0]
    stored = [i for i, p in enumerate(b.points) if p.state is not None]
    assert stored == list(range(0, len(b.points), 5))


def test_below_first_eigenvalue_only_trivial(p2_square_small):
    b = trace_branch(p2_square_small, 35.0, 38.0, 0.5, 0.0, BranchSeed((1, 1)))
    assert np.all(np.abs(b.ordinates) < DELTA)
    d = sweep_diagram(p2_square_small, (35.0, 38.0), 0.5, 0.0, [BranchSeed((1, 1))])
    assert d.detected_bifurcations == []
    assert d.nontrivial_at(38.0) == 0


def test_trace_is_deterministic(p2_square_small):
    args = (p2_square_small, 39.0, 42.0, 0.5, 0.0, BranchSeed((1, 1)))
    a = trace_branch(*args).ordinates
    b = trace_branch(*args).ordinates
    assert np.array_equal(a, b)


def test_trace_argument_checks(p2_square_small):
    seed = BranchSeed((1, 1))
    with pytest.raises(InvalidArgumentError):
        trace_branch(p2_square_small, 40.0, 35.0, 0.5, 0.0, seed)
    with pytest.raises(InvalidArgumentError):
        trace_branch(p2_square_small, 35.0, 40.0, 0.0, 0.0, seed)
    with pytest.raises(InvalidArgumentError):
        trace_branch(p2_square_small, 35.0, 40.0, 0.5, 0.0, seed, delta=0.0)


def test_sweep_2d_rejects_psi_outside_range(p2_square_small):
    with pytest.raises(InvalidArgumentError):
        sweep_2d(p2_square_small, (35, 40), 1.0, [2.5], BranchSeed((1, 1)))


def test_sweep_2d_matches_eigenvalues():
    s = build_space(build_mesh(1, 6, 6), 2)
    rows = sweep_2d(s, (35.0, 90.0), 1.0, [0.0, 1.0], BranchSeed((1, 1)))
    assert [r[0] for r in rows] == [0.0, 1.0]
    for psi, branch, lam_star in rows:
        ref = buckling_eigs(s, psi=psi, k=1)[0].value
        assert lam_star == pytest.approx(ref, rel=0.02)
    assert rows[1][2] > rows[0][2]


def test_seed_profile_replaces_closed_form(p2_square_small):
    from vkplate.eigen import exact_eigenfunction

    v = exact_eigenfunction(2, 1, 1.0, p2_square_small).coeffs
    seed = BranchSeed((1, 1), amplitude=0.5, profile=v)
    assert np.allclose(seed.lift(p2_square_small).u.coeffs, 0.5 * v)
    assert seed == BranchSeed((1, 1), amplitude=0.5)
