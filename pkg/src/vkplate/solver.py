"""Full-order residual, block Jacobian and Newton-Kantorovich iteration.

Unknowns are stacked as X = (u, U, phi, Phi), each over interior dofs.
Residual rows (one per test field):

    A u + B U
    A U + M(phi) u + lam D(psi) u
    A phi + B Phi
    A Phi - M(u) u

with M(z)_ij = int [z, E_j] E_i and D(psi) the weighted x-stiffness.
"""

import logging
import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from vkplate.assembly import assemble_bracket, assemble_load_pair, mass_of, stiffness_of
from vkplate.errors import InvalidArgumentError, SingularSystemError
from vkplate.fespace import FeSpace, ScalarField

log = logging.getLogger(__name__)

FIELDS = ("u", "U", "phi", "Phi")
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 20


@dataclass
class State:
    u: ScalarField
    U: ScalarField
    phi: ScalarField
    Phi: ScalarField
    provenance: str = "full-order"

    def __post_init__(self):
        sp0 = self.u.space
        if any(f.space is not sp0 for f in (self.U, self.phi, self.Phi)):
            raise InvalidArgumentError("all four fields must share one space")

    @property
    def space(self) -> FeSpace:
        return self.u.space

    @classmethod
    def zeros(cls, space: FeSpace) -> "State":
        n = space.n_interior
        return cls(*(ScalarField(space, np.zeros(n)) for _ in FIELDS))

    @classmethod
    def from_vector(cls, space: FeSpace, x, provenance="full-order") -> "State":
        x = np.asarray(x, dtype=float)
        n = space.n_interior
        if x.shape != (4 * n,):
            raise InvalidArgumentError(f"expected vector of length {4 * n}, got {x.shape}")
        return cls(*(ScalarField(space, x[k * n : (k + 1) * n].copy()) for k in range(4)), provenance=provenance)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u.coeffs, self.U.coeffs, self.phi.coeffs, self.Phi.coeffs])

    def flipped(self) -> "State":
        """Mirror image (-u, -U, phi, Phi) under the Z2 symmetry."""
        return State(-self.u, -self.U, self.phi, self.Phi, self.provenance)


@dataclass
class NewtonReport:
    converged: bool
    iterations: int
    increment_norms: list = field(default_factory=list)
    singular: bool = False
    retries: int = 0


class Operators:
    """Lambda-independent matrices of one space, shared read-only."""

    def __init__(self, space: FeSpace):
        self.space = space
        self.n = space.n_interior
        self.A = stiffness_of(space)
        self.B = mass_of(space)
        self.D0, self.D1 = assemble_load_pair(space)
        self._D = {}

    def D(self, psi: float) -> sp.csr_matrix:
        psi = float(psi)
        if psi not in self._D:
            self._D[psi] = (self.D0 - psi * self.D1).tocsr()
        return self._D[psi]

    def h1_norm(self, x: np.ndarray) -> float:
        """H1 seminorm of a stacked 4-field vector."""
        n = self.n
        blocks = x.reshape(4, n)
        return float(np.sqrt(max(sum(b @ (self.A @ b) for b in blocks), 0.0)))


_OPERATORS: "weakref.WeakKeyDictionary[FeSpace, Operators]" = weakref.WeakKeyDictionary()


def operators(space: FeSpace) -> Operators:
    ops = _OPERATORS.get(space)
    if ops is None:
        ops = _OPERATORS[space] = Operators(space)
    return ops


def _split(state: State):
    return state.u.coeffs, state.U.coeffs, state.phi.coeffs, state.Phi.coeffs


def residual(state: State, lam: float, psi: float = 0.0) -> np.ndarray:
    ops = operators(state.space)
    A, B = ops.A, ops.B
    u, U, phi, Phi = _split(state)
    Mphi = assemble_bracket(state.space, phi)
    Mu = assemble_bracket(state.space, u)
    return np.concatenate(
        [
            A @ u + B @ U,
            A @ U + Mphi @ u + lam * (ops.D(psi) @ u),
            A @ phi + B @ Phi,
            A @ Phi - Mu @ u,
        ]
    )


def jacobian(state: State, lam: float, psi: float = 0.0) -> sp.csc_matrix:
    """4x4 block Jacobian; the (4,1) block -C1 - C3 equals -2 M(u)."""
    ops = operators(state.space)
    A, B = ops.A, ops.B
    Mphi = assemble_bracket(state.space, state.phi)
    Mu = assemble_bracket(state.space, state.u)
    return sp.bmat(
        [
            [A, B, None, None],
            [Mphi + lam * ops.D(psi), A, Mu, None],
            [None, None, A, B],
            [-2.0 * Mu, None, None, A],
        ],
        format="csc",
    )


def factorize(system, pivoting: bool = False):
    """Sparse LU of a square system; raises SingularSystemError when singular.

    The default ordering (minimum degree on A^T + A, weak diagonal pivoting)
    suits the block Jacobian, whose diagonal blocks are all stiffness
    matrices; ``pivoting=True`` uses minimum degree on A^T A with partial pivoting.
    """
    system = sp.csc_matrix(system)
    if system.shape[0] != system.shape[1]:
        raise InvalidArgumentError(f"system must be square, got {system.shape}")
    if pivoting:
        kw = dict(permc_spec="MMD_ATA")
    else:
        kw = dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01)
    try:
        lu = spla.splu(system, **kw)
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise SingularSystemError(str(exc)) from exc
    d = np.abs(lu.U.diagonal())
    if d.size and (not np.all(np.isfinite(d)) or d.min() <= 1e-14 * d.max()):
        raise SingularSystemError("LU pivot below tolerance: system numerically singular")
    return lu


def _refined_solve(system, lu, rhs, nb, steps=3):
    x = lu.solve(rhs)
    rel = np.inf
    for _ in range(steps + 1):
        if not np.all(np.isfinite(x)):
            return x, np.inf
        r = rhs - system @ x
        rel = np.linalg.norm(r) / nb
        if rel <= 1e-12:
            break
        x = x + lu.solve(r)
    return x, rel


def solve_linear(system, rhs) -> np.ndarray:
    """Direct sparse solve with iterative refinement.

    Guarantees ||Ax - b|| / ||b|| <= 1e-10 or raises SingularSystemError.
    """
    rhs = np.asarray(rhs, dtype=float)
    system = sp.csc_matrix(system)
    nb = np.linalg.norm(rhs)
    if nb == 0.0:
        factorize(system)
        return np.zeros_like(rhs)
    x, rel = _refined_solve(system, factorize(system), rhs, nb)
    if rel > 1e-10:
        x, rel = _refined_solve(system, factorize(system, pivoting=True), rhs, nb)
    if rel > 1e-10:
        raise SingularSystemError(f"relative residual {rel:.2e} after refinement")
    return x


def newton_solve(
    guess: State,
    lam: float,
    psi: float = 0.0,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
    rng=None,
    max_retries: int = 2,
) -> tuple[State, NewtonReport]:
    """Newton-Kantorovich: solve J dX = G, then X <- X - dX.

    Converged iff the H1 norm of the last increment is <= tol. A singular
    Jacobian triggers a perturbation of the guess of H1 size 1e-8, at most
    ``max_retries`` times; the last iterate is returned in every case.
    """
    if tol <= 0:
        raise InvalidArgumentError("Newton tolerance must be positive")
    space = guess.space
    ops = operators(space)
    rng = np.random.default_rng(0) if rng is None else rng
    x = guess.vector()
    report = NewtonReport(converged=False, iterations=0)
    retries = 0
    while report.iterations < max_iter:
        state = State.from_vector(space, x)
        G = residual(state, lam, psi)
        J = jacobian(state, lam, psi)
        try:
            dx = solve_linear(J, G)
        except SingularSystemError:
            report.singular = True
            if retries >= max_retries:
                log.debug("singular Jacobian at lam=%g, giving up", lam)
                break
            retries += 1
            w = rng.standard_normal(x.size)
            x = x + 1e-8 * w / max(ops.h1_norm(w), 1e-300)
            continue
        x = x - dx
        nrm = ops.h1_norm(dx)
        report.iterations += 1
        report.increment_norms.append(nrm)
        if not np.isfinite(nrm) or nrm > 1e12:
            break
        if nrm <= tol:
            report.converged = True
            break
    report.retries = retries
    return State.from_vector(space, x), report
