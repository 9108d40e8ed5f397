"""Buckling loads from the linearized plate equations.

Two discrete eigenproblems share the mixed split u, U = -B^{-1} A u:

* buckling loads: S u = lam D(psi) u with S = A B^{-1} A,
* parametrized spectrum: (S - lam D(psi)) u = sigma B u, whose curves sigma(lam)
  cross zero at the buckling loads.

S is never formed; every apply costs sparse solves with A (and B, or a
block system) factored once.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linear_sum_assignment

from vkplate.assembly import assemble_load_matrix, mass_of, stiffness_of
from vkplate.errors import EigensolverError, InvalidArgumentError
from vkplate.fespace import FeSpace, ScalarField, h1_seminorm, interpolate

EIG_TOL = 1e-8
EIG_MAX_ITER = 500
CLUSTER_RTOL = 1e-6


@dataclass
class EigenPair:
    value: float
    mode: ScalarField
    multiplicity: int = 1


@dataclass
class SpectrumTrace:
    lambda_grid: np.ndarray
    sigma_curves: np.ndarray  # (k, len(grid))
    crossings: list = field(default_factory=list)  # (curve, (lam_before, lam_after))

    def first_crossing(self):
        if not self.crossings:
            return None
        return min(self.crossings, key=lambda c: c[1][1])


def exact_eigenvalue(m: int, n: int, L: float) -> float:
    """(pi/L)^2 (m + n^2 L^2 / m)^2 for the simply supported rectangle."""
    if m < 1 or n < 1 or L <= 0:
        raise InvalidArgumentError("need m, n >= 1 and L > 0")
    return (np.pi / L) ** 2 * (m + n * n * L * L / m) ** 2


def exact_eigenfunction(m: int, n: int, L: float, space: FeSpace) -> ScalarField:
    return interpolate(space, lambda x, y: np.sin(m * np.pi * x / L) * np.sin(n * np.pi * y))


def _normalize_mode(space, vec):
    f = ScalarField(space, vec)
    nrm = h1_seminorm(f)
    c = vec / nrm
    big = np.flatnonzero(np.abs(c) > 1e-8)
    if big.size and c[big[0]] < 0:
        c = -c
    return ScalarField(space, c)


def cluster(values, rtol=CLUSTER_RTOL):
    """Group sorted values whose relative gap to the previous one is <= rtol.

    Returns the multiplicity of each value's cluster.
    """
    values = np.asarray(values, dtype=float)
    mult = np.ones(values.size, dtype=int)
    start = 0
    for i in range(1, values.size + 1):
        if i == values.size or abs(values[i] - values[i - 1]) > rtol * max(abs(values[i]), abs(values[i - 1])):
            mult[start:i] = i - start
            start = i
    return mult


def _subspace_iteration(apply_op, ritz, n, p, wanted, converged, x0=None, rng=None, max_iter=EIG_MAX_ITER):
    """Block inverse iteration with Rayleigh-Ritz orthogonalization.

    ``apply_op(X)`` returns the iterated block, ``ritz(X, Y)`` returns Ritz values
    and coefficients of span(Y) given the previous block X, ``wanted(vals)``
    selects indices of the target pairs and ``converged(X, Y, vals, C, idx)``
    returns a boolean mask over ``idx``.
    """
    rng = np.random.default_rng(12345) if rng is None else rng
    X = rng.standard_normal((n, p))
    if x0 is not None:
        m = min(x0.shape[1], p)
        X[:, :m] = x0[:, :m]
    X, _ = np.linalg.qr(X)
    last = None
    for it in range(1, max_iter + 1):
        Y = apply_op(X)
        vals, C = ritz(X, Y)
        idx = wanted(vals)
        ok = converged(X, Y, vals, C, idx)
        Xn = Y @ C
        last = (vals, Xn, idx, ok)
        if np.all(ok):
            return vals, Xn, idx, it
        X = Xn
    vals, Xn, idx, ok = last
    raise EigensolverError(
        f"eigensolver did not converge in {max_iter} iterations",
        partial=[(vals[i], Xn[:, i]) for i, good in zip(idx, ok) if good],
    )


class _BucklingOperator:
    def __init__(self, space, psi):
        self.A = stiffness_of(space).tocsc()
        self.B = mass_of(space).tocsc()
        self.D = assemble_load_matrix(space, psi).tocsr()
        self.luA = spla.splu(self.A)
        self.luB = spla.splu(self.B)

    def S(self, X):
        return self.A @ self.luB.solve(np.asarray(self.A @ X))

    def apply(self, X):
        """S^{-1} D X = A^{-1} B A^{-1} D X."""
        return self.luA.solve(np.asarray(self.B @ self.luA.solve(np.asarray(self.D @ X))))


def buckling_eigs(space: FeSpace, psi: float = 0.0, k: int = 4, tol: float = EIG_TOL,
                  max_iter: int = EIG_MAX_ITER, cluster_rtol: float = CLUSTER_RTOL) -> list[EigenPair]:
    """Smallest k positive buckling loads of S u = lam D(psi) u.

    Iterates with S^{-1} D, whose dominant positive eigenvalues mu = 1/lam
    belong to the smallest positive loads; D(psi) is indefinite for psi > 1,
    so the block carries extra guard vectors for the negative part.
    """
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    op = _BucklingOperator(space, psi)
    if op.D.nnz == 0 or abs(op.D).max() == 0:
        raise InvalidArgumentError("load matrix vanishes")
    n = space.n_interior
    p = min(n, 2 * k + 6)
    if p < k:
        raise InvalidArgumentError(f"space has only {n} interior dofs, cannot return {k} eigenpairs")

    def ritz(X, Y):
        DY = op.D @ Y
        K = Y.T @ DY
        G = Y.T @ (op.D @ X)  # = Y^T S Y since S Y = D X
        K, G = 0.5 * (K + K.T), 0.5 * (G + G.T)
        mu, C = sla.eigh(K, G)
        order = np.argsort(-mu)
        return mu[order], C[:, order]

    def wanted(mu):
        pos = np.flatnonzero(mu > 0)
        return pos[:k]

    def converged(X, Y, mu, C, idx):
        if idx.size < k:
            return np.zeros(k, dtype=bool)
        U = Y @ C[:, idx]
        SU = (op.D @ X) @ C[:, idx]
        R = SU - (op.D @ U) / mu[idx]
        return np.linalg.norm(R, axis=0) <= tol * np.linalg.norm(SU, axis=0)

    mu, V, idx, _ = _subspace_iteration(op.apply, ritz, n, p, wanted, converged, max_iter=max_iter)
    lam = 1.0 / mu[idx]
    mult = cluster(lam, cluster_rtol)
    return [EigenPair(float(l), _normalize_mode(space, V[:, i]), int(m)) for l, i, m in zip(lam, idx, mult)]


def eigen_residual(space: FeSpace, pair: EigenPair, psi: float = 0.0) -> float:
    """||S u - lam D u|| / ||S u|| for a computed pair."""
    op = _BucklingOperator(space, psi)
    u = pair.mode.coeffs
    Su = op.S(u)
    return float(np.linalg.norm(Su - pair.value * (op.D @ u)) / np.linalg.norm(Su))


def _shifted_solver(A, B, D, lam):
    """Factor [[A, B], [lam D, A]], whose solve with rhs (0, -b) gives (S - lam D)^{-1} b."""
    n = A.shape[0]
    K = sp.bmat([[A, B], [lam * D, A]], format="csc")
    lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01)

    def solve(b):
        rhs = np.zeros((2 * n,) + b.shape[1:])
        rhs[:n] = 0.0
        rhs[n:] = -b
        return lu.solve(rhs)[:n]

    return solve


def spectrum_vs_lambda(space: FeSpace, lambda_grid, psi: float = 0.0, k: int = 4, tol: float = EIG_TOL,
                       max_iter: int = EIG_MAX_ITER) -> SpectrumTrace:
    """Curves sigma_i(lam) of (S - lam D) u = sigma B u.

    At every grid point the k + guard eigenvalues of smallest modulus are
    computed; curves are continued by maximal B-overlap of modes, not by
    sorted order, since they cross each other.
    """
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise InvalidArgumentError("lambda grid must be nonempty and strictly increasing")
    A = stiffness_of(space).tocsc()
    B = mass_of(space).tocsc()
    D = assemble_load_matrix(space, psi).tocsc()
    n = space.n_interior
    p = min(n, k + 6)
    if p < k:
        raise InvalidArgumentError(f"space has only {n} interior dofs")

    curves = np.empty((k, grid.size))
    tracked = None  # B-orthonormal modes of the k curves
    x0 = None
    for j, lam in enumerate(grid):
        solve = _shifted_solver(A, B, D, lam)

        def apply(X):
            return solve(np.asarray(B @ X))

        def ritz(X, Y):
            BY = B @ Y
            G = Y.T @ BY
            K = Y.T @ (B @ X)  # Y^T K Y since K Y = B X
            K, G = 0.5 * (K + K.T), 0.5 * (G + G.T)
            sig, C = sla.eigh(K, G)
            order = np.argsort(np.abs(sig))
            return sig[order], C[:, order]

        def wanted(sig):
            return np.arange(k)

        def converged(X, Y, sig, C, idx):
            U = Y @ C[:, idx]
            KU = (B @ X) @ C[:, idx]
            R = KU - (B @ U) * sig[idx]
            return np.linalg.norm(R, axis=0) <= tol * np.maximum(np.linalg.norm(KU, axis=0), 1e-300)

        sig, V, _, _ = _subspace_iteration(apply, ritz, n, p, wanted, converged, x0=x0, max_iter=max_iter)
        x0 = V
        if tracked is None:
            sel = np.arange(k)
        else:
            overlap = np.abs(tracked.T @ (B @ V))
            _, sel = linear_sum_assignment(-overlap)
        curves[:, j] = sig[sel]
        tracked = V[:, sel]

    crossings = []
    for i in range(k):
        s = curves[i]
        for j in range(1, grid.size):
            if s[j - 1] > 0 >= s[j]:
                crossings.append((i, (float(grid[j - 1]), float(grid[j]))))
    crossings.sort(key=lambda c: (c[1][1], c[0]))
    return SpectrumTrace(grid, curves, crossings)


def convergence_order(values_by_mesh, exact: float) -> float:
    """Least-squares slope of log|lam_h - exact| against log(mesh_size).

    Returns nan when some error is below 1e-12 (order undefined).
    """
    data = sorted(values_by_mesh, key=lambda t: -t[0])
    if len(data) < 3:
        raise InvalidArgumentError("need at least three mesh sizes")
    h = np.array([t[0] for t in data], dtype=float)
    if np.any(np.diff(h) >= 0):
        raise InvalidArgumentError("mesh sizes must be distinct")
    err = np.abs(np.array([t[1] for t in data], dtype=float) - exact)
    if np.any(err < 1e-12):
        return float("nan")
    slope, _ = np.polyfit(np.log(h), np.log(err), 1)
    return float(slope)


def modal_overlap(space: FeSpace, f: ScalarField, g: ScalarField) -> float:
    """|(f, g)_B| / (|f|_B |g|_B)."""
    B = mass_of(space)
    a, b = f.coeffs, g.coeffs
    den = np.sqrt((a @ (B @ a)) * (b @ (B @ b)))
    return float(abs(a @ (B @ b)) / den) if den > 0 else 0.0
