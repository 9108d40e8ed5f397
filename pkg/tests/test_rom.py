import warnings

import numpy as np
import pytest

from vkplate.assembly import assemble_bracket
from vkplate.continuation import Branch, BranchPoint, BranchSeed, sweep_diagram
from vkplate.errors import DegenerateInputError, InvalidArgumentError
from vkplate.rom import (
    FIELDS,
    ReducedBasis,
    ReducedState,
    SnapshotSet,
    branch_full_solver,
    collect_snapshots,
    load_rom,
    lift,
    pod,
    project,
    project_operators,
    rb_error,
    read_rom,
    reduced_jacobian,
    reduced_newton,
    reduced_residual,
    save_rom,
    truncate,
    truncate_operators,
)
from vkplate.solver import State, jacobian, newton_solve, operators, residual


@pytest.fixture(scope="module")
def training(p2_square):
    seeds = [BranchSeed((1, 1)), BranchSeed((1, 1), sign=-1)]
    d = sweep_diagram(p2_square, (36.0, 62.0), 1.0, 0.0, seeds, store_every=2)
    return d


@pytest.fixture(scope="module")
def rom(training):
    snaps = collect_snapshots(training.branches)
    basis = pod(snaps, 8)
    return snaps, basis, project_operators(basis)


def _fake_branch(space, n, rng):
    pts = []
    for k in range(n):
        st = State.from_vector(space, rng.standard_normal(4 * space.n_interior))
        pts.append(BranchPoint(40.0 + k, 0.0, 0.0, True, 1, state=st))
    pts.append(BranchPoint(99.0, 0.0, 0.0, True, 1))  # no stored state
    return Branch(BranchSeed((1, 1)), pts)


def test_collect_snapshot_counts(p2_square_small, rng):
    b = _fake_branch(p2_square_small, 7, rng)
    assert collect_snapshots([b]).count == 7
    s2 = collect_snapshots([b], stride=2)
    assert s2.count == 4
    assert list(s2.lambdas) == [40.0, 42.0, 44.0, 46.0]
    assert s2.fields["u"].shape == (p2_square_small.n_interior, 4)


def test_collect_snapshot_errors(p2_square_small):
    empty = Branch(BranchSeed((1, 1)), [BranchPoint(40.0, 0.0, 0.0, True, 1)])
    with pytest.raises(InvalidArgumentError):
        collect_snapshots([empty])
    with pytest.raises(InvalidArgumentError):
        collect_snapshots([empty], stride=0)


def _snapset(space, cols):
    n = cols[0].size
    M = np.column_stack(cols)
    return SnapshotSet(space, {f: M.copy() for f in FIELDS}, np.arange(len(cols), dtype=float), np.zeros(len(cols)))


def test_pod_single_snapshot(p2_square_small, rng):
    A = operators(p2_square_small).A
    v = rng.standard_normal(p2_square_small.n_interior)
    b = pod(_snapset(p2_square_small, [v]), 1)
    assert b.N == 1
    w = v / np.sqrt(v @ (A @ v))
    assert np.allclose(np.abs(b.bases["u"][:, 0]), np.abs(w), atol=1e-12)


def test_pod_orthogonal_equal_snapshots(p2_square_small, rng):
    A = operators(p2_square_small).A
    v, w = rng.standard_normal((2, p2_square_small.n_interior))
    w -= (v @ (A @ w)) / (v @ (A @ v)) * v
    w *= np.sqrt((v @ (A @ v)) / (w @ (A @ w)))
    b = pod(_snapset(p2_square_small, [v, w]), 2)
    assert b.N == 2
    assert np.allclose(b.pod_energies["u"], [0.5, 0.5], atol=1e-12)


def test_pod_zero_snapshots_rejected(p2_square_small):
    z = np.zeros(p2_square_small.n_interior)
    with pytest.raises(DegenerateInputError):
        pod(_snapset(p2_square_small, [z, z]), 3)


def test_pod_rank_deficient_warns(p2_square_small, rng):
    v = rng.standard_normal(p2_square_small.n_interior)
    with pytest.warns(UserWarning):
        b = pod(_snapset(p2_square_small, [v, 2 * v]), 3)
    assert b.N == 1


def test_pod_trivial_branch_rejected(p2_square_small):
    pts = [BranchPoint(36.0 + k, 0.0, 0.0, True, 1, state=State.zeros(p2_square_small)) for k in range(3)]
    snaps = collect_snapshots([Branch(BranchSeed((1, 1)), pts)])
    with pytest.raises(DegenerateInputError):
        pod(snaps, 3)


def test_basis_orthonormal_and_ordered(rom):
    snaps, basis, ro = rom
    assert basis.N == 8
    A = operators(basis.space).A
    for f in FIELDS:
        V = basis.bases[f]
        assert np.abs(V.T @ (A @ V) - np.eye(basis.N)).max() <= 1e-10
        e = basis.pod_energies[f]
        assert np.all(np.diff(e) <= 1e-15)


def test_projection_error_bounded_by_pod_tail(rom):
    snaps, basis, _ = rom
    A = operators(basis.space).A
    N = 5
    b5 = truncate(basis, N)
    for f in FIELDS:
        S = snaps.fields[f]
        V = b5.bases[f]
        R = S - V @ (V.T @ (A @ S))
        err2 = np.einsum("ij,ij->j", R, A @ R)
        total = np.einsum("ij,ij->j", S, A @ S).sum()
        tail = basis.pod_energies[f][N:].sum() * total
        assert err2.sum() <= tail * (1 + 1e-6) + 1e-20
        assert np.all(err2 <= tail * (1 + 1e-6) + 1e-20)


def test_reduced_operator_blocks(rom):
    _, basis, ro = rom
    b1 = truncate(basis, 1)
    r1 = project_operators(b1)
    for f in FIELDS:
        assert r1.A[f].shape == (1, 1)
        assert r1.A[f][0, 0] == pytest.approx(1.0, abs=1e-12)
        assert np.abs(ro.A[f] - ro.A[f].T).max() <= 1e-12
    # with one shared basis the mass blocks are congruences of an SPD matrix
    shared = ReducedBasis(basis.space, basis.N, {f: basis.bases["u"] for f in FIELDS}, basis.pod_energies)
    rs = project_operators(shared)
    for Bn in (rs.B_uU, rs.B_pP):
        assert np.abs(Bn - Bn.T).max() <= 1e-12 * np.abs(Bn).max()
        assert np.linalg.eigvalsh(Bn).min() > 0


def test_tensor_matches_bracket_assembly(rom, rng):
    _, basis, ro = rom
    s = basis.space
    for _ in range(3):
        q = rng.standard_normal(basis.N)
        Vu, VU, Vp, VP = (basis.bases[f] for f in FIELDS)
        full = VU.T @ (assemble_bracket(s, Vp @ q) @ Vu)
        tens = np.einsum("p,pij->ij", q, ro.T_phi)
        assert np.abs(full - tens).max() <= 1e-10 * max(1.0, np.abs(full).max())
        full_u = VP.T @ (assemble_bracket(s, Vu @ q) @ Vu)
        tens_u = np.einsum("p,pij->ij", q, ro.T_u)
        assert np.abs(full_u - tens_u).max() <= 1e-10 * max(1.0, np.abs(full_u).max())


def _galerkin_V(basis):
    from scipy.linalg import block_diag

    return block_diag(*(basis.bases[f] for f in FIELDS))


def test_reduced_residual_is_projected_residual(rom, rng):
    _, basis, ro = rom
    V = _galerkin_V(basis)
    for lam, psi in ((45.0, 0.0), (52.0, 0.7)):
        x = rng.standard_normal(4 * basis.N)
        X = lift(basis, ReducedState(x))
        ref = V.T @ residual(X, lam, psi)
        assert np.abs(reduced_residual(ro, x, lam, psi) - ref).max() <= 1e-10 * max(1.0, np.abs(ref).max())


def test_reduced_jacobian_is_projected_jacobian(rom, rng):
    _, basis, ro = rom
    V = _galerkin_V(basis)
    for _ in range(3):
        x = rng.standard_normal(4 * basis.N)
        X = lift(basis, ReducedState(x))
        ref = V.T @ (jacobian(X, 47.0, 0.3) @ V)
        assert np.abs(reduced_jacobian(ro, x, 47.0, 0.3) - ref).max() <= 1e-9 * max(1.0, np.abs(ref).max())


def test_lift_project_identity(rom, rng):
    _, basis, _ = rom
    x = rng.standard_normal(4 * basis.N)
    assert np.allclose(project(basis, lift(basis, ReducedState(x))).coeffs, x, atol=1e-12)
    assert not project(basis, State.zeros(basis.space)).coeffs.any()
    assert lift(basis, ReducedState(x)).provenance == "lifted-from-ROM"


def test_projection_distance_matches_least_squares(rom, rng):
    _, basis, _ = rom
    A = operators(basis.space).A.toarray()
    Lc = np.linalg.cholesky(A)  # |v|_A = |Lc^T v|
    s = State.from_vector(basis.space, rng.standard_normal(4 * basis.space.n_interior))
    back = lift(basis, project(basis, s))
    for f in FIELDS:
        V = basis.bases[f]
        v = getattr(s, f).coeffs
        c, *_ = np.linalg.lstsq(Lc.T @ V, Lc.T @ v, rcond=None)
        d_ls = np.linalg.norm(Lc.T @ (v - V @ c))
        d = v - getattr(back, f).coeffs
        assert np.sqrt(d @ A @ d) == pytest.approx(d_ls, rel=1e-9)


def test_reduced_newton_trivial(rom):
    _, _, ro = rom
    rs, rep = reduced_newton(ro, 30.0)
    assert rep.converged
    assert np.abs(rs.coeffs).max() == 0.0


def test_reduced_newton_at_46(rom, training):
    _, basis, ro = rom
    solver = branch_full_solver(basis.space, training.branches[0])
    rep = rb_error(basis, ro, [46.0], solver)
    assert rep.excluded == []
    assert rep.errors[0][1] <= 1e-4


def test_rb_error_reproduces_training_set(training, p2_square):
    b = training.branches[0]
    snaps = collect_snapshots([b])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        basis = pod(snaps, snaps.count)
    ro = project_operators(basis)
    train_lams = [lam for lam, _, st in b.stored_states() if abs(st.u.coeffs).max() > 0]
    rep = rb_error(basis, ro, train_lams, branch_full_solver(p2_square, b))
    assert rep.excluded == []
    assert rep.E_N <= 1e-8


def test_error_decreases_with_N(rom, training):
    _, basis, ro = rom
    solver = branch_full_solver(basis.space, training.branches[0])
    lams = np.linspace(42.0, 60.0, 7)
    E = [rb_error(truncate(basis, N), truncate_operators(ro, N), lams, solver).E_N for N in range(1, 9)]
    assert all(b <= a * (1 + 1e-6) for a, b in zip(E, E[1:]))
    assert E[0] / E[4] >= 100


def test_rom_container_roundtrip(tmp_path, rom):
    _, basis, ro = rom
    path = tmp_path / "basis.rom"
    save_rom(path, basis, ro, {"note": "test"})
    header, arrays = read_rom(path)
    assert header["N"] == basis.N and header["meta"]["note"] == "test"
    b2, ro2 = load_rom(path, basis.space)
    for f in FIELDS:
        assert np.array_equal(b2.bases[f], basis.bases[f])
        assert np.array_equal(ro2.A[f], ro.A[f])
    assert np.array_equal(ro2.T_phi, ro.T_phi)
    x = np.linspace(-1, 1, 4 * basis.N)
    assert np.array_equal(reduced_residual(ro2, x, 50.0), reduced_residual(ro, x, 50.0))
    _, ro3 = load_rom(path)
    assert ro3.N == basis.N


def test_rom_container_rejects_garbage(tmp_path):
    p = tmp_path / "bad.rom"
    p.write_bytes(b"not a rom")
    with pytest.raises(InvalidArgumentError):
        read_rom(p)
