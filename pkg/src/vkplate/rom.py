"""POD-Galerkin reduced model for the four-field plate system.

Offline: snapshots from traced branches -> per-field POD bases (H1_0
orthonormal) -> projected matrices plus third-order bracket tensors.
Online: Newton in dimension 4N, assembled only from ``ReducedOperators``.
"""

import json
import logging
import struct
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from vkplate.assembly import assemble_bracket
from vkplate.errors import DegenerateInputError, InvalidArgumentError, SingularSystemError
from vkplate.fespace import FeSpace, ScalarField
from vkplate.solver import FIELDS, NEWTON_MAX_ITER, NEWTON_TOL, NewtonReport, State, newton_solve, operators

log = logging.getLogger(__name__)

ROM_MAGIC = b"VKROM\x00"
ROM_VERSION = 1


@dataclass
class SnapshotSet:
    space: FeSpace
    fields: dict  # field name -> (n_interior, n_snapshots)
    lambdas: np.ndarray
    psis: np.ndarray

    @property
    def count(self) -> int:
        return self.lambdas.size


def collect_snapshots(branches, stride: int = 1) -> SnapshotSet:
    """Stored states of every branch, in branch order then lambda order."""
    if stride < 1:
        raise InvalidArgumentError("stride must be >= 1")
    states, lams, psis = [], [], []
    for b in branches:
        for lam, psi, st in b.stored_states()[::stride]:
            states.append(st)
            lams.append(lam)
            psis.append(psi)
    if not states:
        raise InvalidArgumentError("no stored states to build snapshots from")
    space = states[0].space
    cols = {f: np.column_stack([getattr(s, f).coeffs for s in states]) for f in FIELDS}
    return SnapshotSet(space, cols, np.array(lams), np.array(psis))


@dataclass
class ReducedBasis:
    space: FeSpace
    N: int
    bases: dict  # field -> (n_interior, N), A-orthonormal
    pod_energies: dict  # field -> fraction of snapshot energy per POD mode

    def V(self, f):
        return self.bases[f]


def _gram_schmidt(V, A, passes=2):
    V = V.copy()
    for _ in range(passes):
        for j in range(V.shape[1]):
            for i in range(j):
                V[:, j] -= (V[:, i] @ (A @ V[:, j])) * V[:, i]
            V[:, j] /= np.sqrt(V[:, j] @ (A @ V[:, j]))
    return V


def _a_orthogonal_qr(S, A):
    """S = Q R with Q A-orthonormal (modified Gram-Schmidt, two passes)."""
    n, m = S.shape
    Q = np.zeros((n, m))
    R = np.zeros((m, m))
    AQ = np.zeros((n, m))
    for j in range(m):
        v = S[:, j].copy()
        for _ in range(2):
            c = AQ[:, :j].T @ v
            v -= Q[:, :j] @ c
            R[:j, j] += c
        nrm = np.sqrt(max(v @ (A @ v), 0.0))
        R[j, j] = nrm
        if nrm > 0:
            Q[:, j] = v / nrm
            AQ[:, j] = A @ Q[:, j]
    return Q, R


def pod(snapshots: SnapshotSet, N_max: int, energy_tol: float = 0.0) -> ReducedBasis:
    """Method of snapshots in the H1_0 seminorm, one basis per field.

    The Gram matrix S^T A S = R^T R is diagonalized through the SVD of R, which
    resolves POD energies far below the square root of machine precision.
    N is the smallest count retaining 1 - energy_tol of every field's energy
    (N_max itself when energy_tol is 0), capped by N_max and by the numerical
    rank of the poorest field.
    """
    if N_max < 1:
        raise InvalidArgumentError("N_max must be >= 1")
    A = operators(snapshots.space).A
    modes, energies = {}, {}
    need = 1
    ranks = []
    for f in FIELDS:
        S = snapshots.fields[f]
        Q, R = _a_orthogonal_qr(S, A)
        W, sig, _ = np.linalg.svd(R)
        if sig.size == 0 or sig[0] <= 0:
            raise DegenerateInputError(f"snapshots of field {f} carry no energy")
        rank = int(np.sum(sig > 1e-12 * sig[0]))
        ranks.append(rank)
        w = sig**2
        frac = w / w.sum()
        need = max(need, int(np.searchsorted(np.cumsum(frac), 1.0 - energy_tol - 1e-15) + 1))
        modes[f] = Q @ W
        energies[f] = frac
    N = N_max if energy_tol <= 0 else min(N_max, need)
    if N > min(ranks):
        warnings.warn(f"snapshot rank {min(ranks)} below requested N={N}; truncating", stacklevel=2)
        N = min(ranks)
    bases = {f: _gram_schmidt(modes[f][:, :N], A) for f in FIELDS}
    return ReducedBasis(snapshots.space, N, bases, energies)


@dataclass
class ReducedState:
    coeffs: np.ndarray

    @property
    def N(self) -> int:
        return self.coeffs.size // 4

    def blocks(self):
        return self.coeffs.reshape(4, -1)


@dataclass
class ReducedOperators:
    """Dense N x N blocks and bracket tensors; nothing here scales with N_h.

    Row/column conventions follow the full Jacobian: ``A[f]`` is the stiffness
    in field f's basis, ``B_uU`` pairs u-tests with U, ``B_pP`` phi-tests with
    Phi, ``D0``/``D1`` give D(psi) = D0 - psi*D1 between U-tests and u.
    ``T_phi[p]`` = V_U^T M(phi basis p) V_u and ``T_u[p]`` = V_Phi^T M(u basis p) V_u.
    """

    N: int
    A: dict
    B_uU: np.ndarray
    B_pP: np.ndarray
    D0: np.ndarray
    D1: np.ndarray
    T_phi: np.ndarray
    T_u: np.ndarray
    meta: dict = field(default_factory=dict)

    def D(self, psi):
        return self.D0 - psi * self.D1


def project_operators(basis: ReducedBasis, space: FeSpace | None = None) -> ReducedOperators:
    space = basis.space if space is None else space
    if space is not basis.space and space.n_interior != basis.bases["u"].shape[0]:
        raise InvalidArgumentError("basis and assemblies live on different spaces")
    ops = operators(space)
    V = basis.bases
    N = basis.N
    A = {f: V[f].T @ (ops.A @ V[f]) for f in FIELDS}
    T_phi = np.empty((N, N, N))
    T_u = np.empty((N, N, N))
    for p in range(N):
        T_phi[p] = V["U"].T @ (assemble_bracket(space, V["phi"][:, p]) @ V["u"])
        T_u[p] = V["Phi"].T @ (assemble_bracket(space, V["u"][:, p]) @ V["u"])
    return ReducedOperators(
        N=N,
        A=A,
        B_uU=V["u"].T @ (ops.B @ V["U"]),
        B_pP=V["phi"].T @ (ops.B @ V["Phi"]),
        D0=V["U"].T @ (ops.D0 @ V["u"]),
        D1=V["U"].T @ (ops.D1 @ V["u"]),
        T_phi=T_phi,
        T_u=T_u,
        meta={"L": space.mesh.L, "nx": space.mesh.nx, "ny": space.mesh.ny, "degree": space.degree},
    )


def reduced_residual(ro: ReducedOperators, x, lam, psi=0.0) -> np.ndarray:
    u, U, phi, Phi = np.asarray(x).reshape(4, ro.N)
    C_phi = np.einsum("p,prq->rq", phi, ro.T_phi)
    C_u = np.einsum("p,prq->rq", u, ro.T_u)
    return np.concatenate(
        [
            ro.A["u"] @ u + ro.B_uU @ U,
            ro.A["U"] @ U + C_phi @ u + lam * (ro.D(psi) @ u),
            ro.A["phi"] @ phi + ro.B_pP @ Phi,
            ro.A["Phi"] @ Phi - C_u @ u,
        ]
    )


def reduced_jacobian(ro: ReducedOperators, x, lam, psi=0.0) -> np.ndarray:
    N = ro.N
    u, U, phi, Phi = np.asarray(x).reshape(4, N)
    C_phi = np.einsum("p,prq->rq", phi, ro.T_phi)  # d/du of the phi-bracket
    C_phi_dphi = np.einsum("q,prq->rp", u, ro.T_phi)  # d/dphi
    C_u = np.einsum("p,prq->rq", u, ro.T_u)
    C_u_sym = np.einsum("q,prq->rp", u, ro.T_u)
    Z = np.zeros((N, N))
    return np.block(
        [
            [ro.A["u"], ro.B_uU, Z, Z],
            [C_phi + lam * ro.D(psi), ro.A["U"], C_phi_dphi, Z],
            [Z, Z, ro.A["phi"], ro.B_pP],
            [-(C_u + C_u_sym), Z, Z, ro.A["Phi"]],
        ]
    )


def _reduced_h1(ro, dx):
    blocks = dx.reshape(4, ro.N)
    return float(np.sqrt(max(sum(b @ (ro.A[f] @ b) for f, b in zip(FIELDS, blocks)), 0.0)))


def reduced_newton(ro: ReducedOperators, lam: float, psi: float = 0.0, guess: ReducedState | None = None,
                   tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER) -> tuple[ReducedState, NewtonReport]:
    """Same iteration as the full-order solver, in dimension 4N."""
    if tol <= 0:
        raise InvalidArgumentError("Newton tolerance must be positive")
    x = np.zeros(4 * ro.N) if guess is None else np.array(guess.coeffs, dtype=float)
    report = NewtonReport(converged=False, iterations=0)
    while report.iterations < max_iter:
        G = reduced_residual(ro, x, lam, psi)
        J = reduced_jacobian(ro, x, lam, psi)
        try:
            dx = np.linalg.solve(J, G)
        except np.linalg.LinAlgError:
            report.singular = True
            break
        x = x - dx
        nrm = _reduced_h1(ro, dx)
        report.iterations += 1
        report.increment_norms.append(nrm)
        if not np.isfinite(nrm) or nrm > 1e12:
            break
        if nrm <= tol:
            report.converged = True
            break
    return ReducedState(x), report


def trace_reduced(basis: ReducedBasis, ro: ReducedOperators, lambdas, psi: float, seed,
                  delta: float = 1e-4, tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER):
    """Reduced counterpart of continuation.trace_branch.

    Returns rows (lam, ordinate, converged, iterations); the ordinate is read
    off the lifted u field. The seed lift is projected once, up front.
    """
    seed_rs = project(basis, seed.lift(basis.space))
    Vu = basis.bases["u"]

    def amp(rs):
        u = Vu @ rs.blocks()[0]
        return float(u[np.argmax(np.abs(u))]) if u.size else 0.0

    rows, prev = [], None
    for lam in lambdas:
        reseed = prev is None or abs(amp(prev)) < delta
        rs, rep = reduced_newton(ro, lam, psi, seed_rs if reseed else prev, tol, max_iter)
        if not reseed and (not rep.converged or abs(amp(rs)) < delta):
            rs2, rep2 = reduced_newton(ro, lam, psi, seed_rs, tol, max_iter)
            if rep2.converged and abs(amp(rs2)) >= delta:
                rs, rep = rs2, rep2
        prev = rs if rep.converged else None
        rows.append((float(lam), amp(rs), rep.converged, rep.iterations))
    return rows


def lift(basis: ReducedBasis, rs: ReducedState) -> State:
    blocks = rs.blocks()
    fields = [ScalarField(basis.space, basis.bases[f] @ c) for f, c in zip(FIELDS, blocks)]
    return State(*fields, provenance="lifted-from-ROM")


def project(basis: ReducedBasis, state: State) -> ReducedState:
    """H1_0 orthogonal projection coefficients (basis is A-orthonormal)."""
    A = operators(basis.space).A
    return ReducedState(np.concatenate([basis.bases[f].T @ (A @ getattr(state, f).coeffs) for f in FIELDS]))


def truncate(basis: ReducedBasis, N: int) -> ReducedBasis:
    """Leading N columns of every field basis (nested POD spaces)."""
    if not 1 <= N <= basis.N:
        raise InvalidArgumentError(f"N must be in [1, {basis.N}]")
    return ReducedBasis(basis.space, N, {f: v[:, :N] for f, v in basis.bases.items()}, basis.pod_energies)


@dataclass
class RBErrorReport:
    N: int
    E_N: float
    errors: list  # (lam, error)
    excluded: list  # lambdas with a non-converged full or reduced solve
    t_online_ms: float
    t_full_ms: float


def rb_error(basis: ReducedBasis, ro: ReducedOperators, test_lambdas, full_solver, psi: float = 0.0,
             tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER) -> RBErrorReport:
    """max over the test sample of |u_h - u_N|_{H1_0}.

    ``full_solver(lam)`` returns ``(solution, guess, seconds)``: the converged
    full-order state (None on failure), the full-order guess it started from
    and its wall time. The reduced solve starts from the projection of the
    same guess.
    """
    test_lambdas = list(test_lambdas)
    if not test_lambdas:
        raise InvalidArgumentError("test sample is empty")
    A = operators(basis.space).A
    errors, excluded, t_on, t_full = [], [], [], []
    for lam in test_lambdas:
        sol, guess, secs = full_solver(lam)
        t0 = time.perf_counter()
        rs, rep = reduced_newton(ro, lam, psi, project(basis, guess), tol, max_iter)
        t_on.append(time.perf_counter() - t0)
        t_full.append(secs)
        if sol is None or not rep.converged:
            excluded.append(float(lam))
            continue
        d = sol.u.coeffs - basis.bases["u"] @ rs.blocks()[0]
        errors.append((float(lam), float(np.sqrt(max(d @ (A @ d), 0.0)))))
    E = max((e for _, e in errors), default=float("nan"))
    if excluded:
        log.warning("rb_error: excluded non-converged lambdas %s", excluded)
    return RBErrorReport(basis.N, E, errors, excluded, 1e3 * float(np.mean(t_on)), 1e3 * float(np.mean(t_full)))


def branch_full_solver(space: FeSpace, branch, psi: float = 0.0, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Memoized full-order solver warm-started from the branch's nearest stored state."""
    stored = [(lam, st) for lam, _, st in branch.stored_states()]
    if not stored:
        raise InvalidArgumentError("branch has no stored states")
    cache = {}

    def solve(lam):
        if lam not in cache:
            guess = min(stored, key=lambda t: (abs(t[0] - lam), t[0]))[1]
            t0 = time.perf_counter()
            X, rep = newton_solve(guess, lam, psi, tol=tol, max_iter=max_iter)
            cache[lam] = (X if rep.converged else None, guess, time.perf_counter() - t0)
        return cache[lam]

    return solve


# --- basis.rom container ---------------------------------------------------


def save_rom(path, basis: ReducedBasis, ro: ReducedOperators, meta: dict | None = None) -> None:
    """Versioned binary container: magic, version, JSON index, row-major float64 payload."""
    arrays = {}
    for f in FIELDS:
        arrays[f"basis/{f}"] = basis.bases[f]
        arrays[f"energy/{f}"] = basis.pod_energies[f]
        arrays[f"A/{f}"] = ro.A[f]
    arrays.update({"B_uU": ro.B_uU, "B_pP": ro.B_pP, "D0": ro.D0, "D1": ro.D1, "T_phi": ro.T_phi, "T_u": ro.T_u})
    index, offset = [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        offset += arr.nbytes
    header = {"N": basis.N, "meta": {**ro.meta, **(meta or {})}, "arrays": index}
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(ROM_MAGIC)
        fh.write(struct.pack("<II", ROM_VERSION, len(hbytes)))
        fh.write(hbytes)
        for name in arrays:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def read_rom(path) -> tuple[dict, dict]:
    """Header dict and name -> array mapping of a basis.rom file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(ROM_MAGIC):
        raise InvalidArgumentError(f"{path} is not a basis.rom container")
    pos = len(ROM_MAGIC)
    version, hlen = struct.unpack_from("<II", blob, pos)
    if version != ROM_VERSION:
        raise InvalidArgumentError(f"unsupported container version {version}")
    pos += 8
    header = json.loads(blob[pos : pos + hlen].decode())
    pos += hlen
    arrays = {}
    for entry in header["arrays"]:
        start = pos + entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=entry["nbytes"] // 8, offset=start)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header, arrays


def load_rom(path, space: FeSpace | None = None) -> tuple[ReducedBasis | None, ReducedOperators]:
    """Reduced operators always; the basis only when ``space`` is given."""
    header, arr = read_rom(path)
    N = header["N"]
    ro = ReducedOperators(
        N=N,
        A={f: arr[f"A/{f}"] for f in FIELDS},
        B_uU=arr["B_uU"],
        B_pP=arr["B_pP"],
        D0=arr["D0"],
        D1=arr["D1"],
        T_phi=arr["T_phi"],
        T_u=arr["T_u"],
        meta=header["meta"],
    )
    basis = None
    if space is not None:
        bases = {f: arr[f"basis/{f}"] for f in FIELDS}
        if bases["u"].shape[0] != space.n_interior:
            raise InvalidArgumentError("basis.rom does not match the given space")
        basis = ReducedBasis(space, N, bases, {f: arr[f"energy/{f}"] for f in FIELDS})
    return basis, ro


def truncate_operators(ro: ReducedOperators, N: int) -> ReducedOperators:
    """Operators of the nested N-dimensional subspace (leading basis columns)."""
    if not 1 <= N <= ro.N:
        raise InvalidArgumentError(f"N must be in [1, {ro.N}]")
    s = slice(0, N)
    return ReducedOperators(
        N=N,
        A={f: a[s, s] for f, a in ro.A.items()},
        B_uU=ro.B_uU[s, s],
        B_pP=ro.B_pP[s, s],
        D0=ro.D0[s, s],
        D1=ro.D1[s, s],
        T_phi=ro.T_phi[s, s, s],
        T_u=ro.T_u[s, s, s],
        meta=dict(ro.meta),
    )
