"""Natural-parameter continuation in lambda with eigenmode seeding.

While the previous solution is numerically flat (max |u| < delta) every
solve restarts from the seed, an amplitude-scaled eigenfunction lift; once
the plate has buckled, each solve is warm-started from the last one.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from vkplate.eigen import buckling_eigs, exact_eigenfunction, modal_overlap
from vkplate.errors import InvalidArgumentError
from vkplate.fespace import FeSpace, ScalarField, max_abs
from vkplate.solver import NEWTON_MAX_ITER, NEWTON_TOL, State, newton_solve

log = logging.getLogger(__name__)

DELTA = 1e-4
D_LAMBDA = 0.5
LAMBDA_RANGE = (35.0, 65.0)
STORE_EVERY = 5
# re-seeded solves landing on a branch of another mode family are discarded
SEED_OVERLAP_MIN = 0.5


@dataclass(frozen=True)
class BranchSeed:
    mode: tuple
    amplitude: float = 1.0
    sign: int = 1
    # optional interior coefficients replacing the closed-form mode shape
    profile: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.amplitude <= 0:
            raise InvalidArgumentError("seed amplitude must be positive")
        if self.sign not in (1, -1):
            raise InvalidArgumentError("seed sign must be +1 or -1")
        m, n = self.mode
        if m < 1 or n < 1:
            raise InvalidArgumentError("seed mode indices must be >= 1")

    def shape(self, space: FeSpace) -> ScalarField:
        if self.profile is not None:
            return ScalarField(space, np.asarray(self.profile, dtype=float))
        m, n = self.mode
        return exact_eigenfunction(m, n, space.mesh.L, space)

    def lift(self, space: FeSpace) -> State:
        st = State.zeros(space)
        st.u = self.amplitude * self.sign * self.shape(space)
        return st

    @property
    def label(self) -> str:
        return f"({self.mode[0]},{self.mode[1]},{'+' if self.sign > 0 else '-'})"


@dataclass
class BranchPoint:
    lam: float
    psi: float
    ordinate: float
    converged: bool
    iterations: int
    reseeded: bool = False
    foreign: bool = False
    state: State | None = None


@dataclass
class Branch:
    seed: BranchSeed
    points: list = field(default_factory=list)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    @property
    def ordinates(self) -> np.ndarray:
        return np.array([p.ordinate for p in self.points])

    def is_nontrivial_at(self, lam, delta=DELTA) -> bool:
        for p in self.points:
            if np.isclose(p.lam, lam):
                return p.converged and abs(p.ordinate) >= delta
        return False

    def departure_index(self, delta=DELTA):
        for i, p in enumerate(self.points):
            if p.converged and abs(p.ordinate) >= delta:
                return i
        return None

    def stored_states(self):
        return [(p.lam, p.psi, p.state) for p in self.points if p.state is not None]


@dataclass
class BifurcationDiagram:
    branches: list
    trivial_branch: list
    detected_bifurcations: list  # (branch index, lam*) for branches that buckled

    def nontrivial_at(self, lam, delta=DELTA) -> int:
        return sum(b.is_nontrivial_at(lam, delta) for b in self.branches)


def ordinate(u: ScalarField) -> float:
    """Signed value of u at its dof of largest modulus."""
    return max_abs(u)[0]


def _lambda_grid(lam_start, lam_end, dlam):
    if not lam_start < lam_end:
        raise InvalidArgumentError("need lambda_start < lambda_end")
    if dlam <= 0:
        raise InvalidArgumentError("d_lambda must be positive")
    count = int(np.floor((lam_end - lam_start) / dlam + 1e-9))
    return lam_start + dlam * np.arange(count + 1)


def solve_from_seed(space, lam, psi, seed, delta=DELTA, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Newton from the seed lift; a nontrivial result dominated by another
    mode family is replaced by the trivial solution and flagged ``foreign``."""
    X, rep = newton_solve(seed.lift(space), lam, psi, tol=tol, max_iter=max_iter)
    foreign = False
    if rep.converged and abs(ordinate(X.u)) >= delta:
        if modal_overlap(space, X.u, seed.shape(space)) < SEED_OVERLAP_MIN:
            foreign = True
            X = State.zeros(space)
    return X, rep, foreign


def trace_branch(space: FeSpace, lam_start: float, lam_end: float, dlam: float, psi: float,
                 seed: BranchSeed, delta: float = DELTA, tol: float = NEWTON_TOL,
                 max_iter: int = NEWTON_MAX_ITER, store_every: int = STORE_EVERY) -> Branch:
    if delta <= 0:
        raise InvalidArgumentError("delta must be positive")
    grid = _lambda_grid(lam_start, lam_end, dlam)
    branch = Branch(seed)
    prev = None
    for k, lam in enumerate(grid):
        lam = float(lam)
        reseed = prev is None or abs(ordinate(prev.u)) < delta
        if reseed:
            X, rep, foreign = solve_from_seed(space, lam, psi, seed, delta, tol, max_iter)
        else:
            X, rep = newton_solve(prev, lam, psi, tol=tol, max_iter=max_iter)
            foreign = False
            if not rep.converged or abs(ordinate(X.u)) < delta:
                # close to the critical load the warm start can fall back into
                # the trivial basin; the seed lift usually recovers the branch
                Xs, reps, fs = solve_from_seed(space, lam, psi, seed, delta, tol, max_iter)
                if reps.converged and abs(ordinate(Xs.u)) >= delta:
                    X, rep, foreign, reseed = Xs, reps, fs, True
        if rep.converged:
            prev = X
        else:
            log.info("branch %s: Newton failed at lam=%g", seed.label, lam)
            prev = None
        branch.points.append(
            BranchPoint(
                lam=lam,
                psi=float(psi),
                ordinate=ordinate(X.u),
                converged=rep.converged,
                iterations=rep.iterations,
                reseeded=reseed,
                foreign=foreign,
                state=X if store_every and k % store_every == 0 else None,
            )
        )
    return branch


def refine_departure(space, branch: Branch, dlam, psi, delta=DELTA, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Bisect between the last flat point and the first buckled one until the
    bracket is <= dlam/8; returns its midpoint, or None if never buckled."""
    i = branch.departure_index(delta)
    if i is None:
        return None
    hi = branch.points[i].lam
    if i == 0:
        return hi
    lo = branch.points[i - 1].lam
    while hi - lo > dlam / 8 + 1e-12:
        mid = 0.5 * (lo + hi)
        X, rep, _ = solve_from_seed(space, mid, psi, branch.seed, delta, tol, max_iter)
        if rep.converged and abs(ordinate(X.u)) >= delta:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def sweep_diagram(space: FeSpace, lam_range=LAMBDA_RANGE, dlam: float = D_LAMBDA, psi: float = 0.0,
                  seeds=(), delta: float = DELTA, tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER,
                  store_every: int = STORE_EVERY) -> BifurcationDiagram:
    lam_start, lam_end = lam_range
    grid = _lambda_grid(lam_start, lam_end, dlam)
    branches, detected = [], []
    for seed in seeds:
        b = trace_branch(space, lam_start, lam_end, dlam, psi, seed, delta, tol, max_iter, store_every)
        branches.append(b)
        lam_star = refine_departure(space, b, dlam, psi, delta, tol, max_iter)
        if lam_star is not None:
            detected.append((len(branches) - 1, lam_star))
    return BifurcationDiagram(branches, [(float(l), 0.0) for l in grid], detected)


def sweep_2d(space: FeSpace, lam_range, dlam: float, psi_grid, seed: BranchSeed, delta: float = DELTA,
             tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER, store_every: int = STORE_EVERY,
             eigen_seed: bool = True):
    """First-mode branch and its critical load for every psi; rows (psi, branch, lam*).

    With ``eigen_seed`` the seed shape is the first buckling mode at each psi
    (scaled to max |u| = 1): once psi > 1 the compressed strip narrows and
    that mode is no longer close to the closed-form shape of ``seed.mode``.
    """
    rows = []
    for psi in psi_grid:
        if not 0.0 <= psi <= 2.0:
            raise InvalidArgumentError(f"psi={psi} outside [0, 2]")
        row_seed = seed
        if eigen_seed:
            v = buckling_eigs(space, psi, k=1)[0].mode.coeffs
            row_seed = BranchSeed(seed.mode, seed.amplitude, seed.sign, profile=v / abs(max_abs(ScalarField(space, v))[0]))
        d = sweep_diagram(space, lam_range, dlam, psi, [row_seed], delta, tol, max_iter, store_every)
        lam_star = d.detected_bifurcations[0][1] if d.detected_bifurcations else None
        rows.append((float(psi), d.branches[0], lam_star))
    return rows


def square_seeds(amplitude=1.0):
    return [BranchSeed(m, amplitude, s) for m in ((1, 1), (2, 1)) for s in (1, -1)]


def rectangle_seeds(amplitude=1.0):
    return [BranchSeed(m, amplitude, s) for m in ((2, 1), (3, 1), (1, 1), (4, 1)) for s in (1, -1)]
