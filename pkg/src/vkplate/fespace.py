"""Continuous Lagrange P_r spaces on structured triangulations.

Global dofs live on the refined tensor lattice of (r*nx+1) x (r*ny+1) points,
which holds every Lagrange node of every triangle when all cells are cut along
the same diagonal. Homogeneous Dirichlet data is imposed by dropping boundary
dofs, so fields carry coefficients on interior dofs only.
"""

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from vkplate.errors import InvalidArgumentError, OutOfDomainError, UnsupportedOperationError
from vkplate.mesh import Mesh
from vkplate.quadrature import triangle_rule

SUPPORTED_DEGREES = (1, 2, 3)


def _monomials(r):
    return [(i, k - i) for k in range(r + 1) for i in range(k, -1, -1)]


def _reference_nodes(r):
    """Lagrange nodes on the reference triangle: vertices, edges, interior."""
    v = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    nodes = list(v)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        pa, pb = np.array(v[a]), np.array(v[b])
        for s in range(1, r):
            nodes.append(tuple(pa + (pb - pa) * s / r))
    for j in range(1, r):
        for i in range(1, r - j):
            nodes.append((i / r, j / r))
    return np.array(nodes)


@lru_cache(maxsize=None)
def _reference_coefficients(r):
    """Monomial coefficients of the nodal basis: column k is basis function k."""
    nodes = _reference_nodes(r)
    mons = _monomials(r)
    V = np.array([[x**p * y**q for (p, q) in mons] for x, y in nodes])
    C = np.linalg.inv(V)
    C[np.abs(C) < 1e-13] = 0.0
    return C


def reference_basis(r, pts):
    """Values, gradients and hessians (xx, xy, yy) of the reference basis.

    Shapes: (nq, nb), (nq, nb, 2), (nq, nb, 3).
    """
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    C = _reference_coefficients(r)
    mons = _monomials(r)

    def pw(t, k):
        return t**k if k >= 0 else np.zeros_like(t)

    M = np.stack([pw(x, p) * pw(y, q) for p, q in mons], axis=1)
    Mx = np.stack([p * pw(x, p - 1) * pw(y, q) for p, q in mons], axis=1)
    My = np.stack([q * pw(x, p) * pw(y, q - 1) for p, q in mons], axis=1)
    Mxx = np.stack([p * (p - 1) * pw(x, p - 2) * pw(y, q) for p, q in mons], axis=1)
    Mxy = np.stack([p * q * pw(x, p - 1) * pw(y, q - 1) for p, q in mons], axis=1)
    Myy = np.stack([q * (q - 1) * pw(x, p) * pw(y, q - 2) for p, q in mons], axis=1)
    vals = M @ C
    grads = np.stack([Mx @ C, My @ C], axis=-1)
    hess = np.stack([Mxx @ C, Mxy @ C, Myy @ C], axis=-1)
    return vals, grads, hess


@dataclass
class Tabulation:
    """Per-element basis data at quadrature points.

    ``values`` (nq, nb) is shared by all elements; ``grads`` is (nq, nb, 2) and
    ``hessians`` (nq, nb, 3) in physical coordinates; ``weights`` (nq,) already
    include the element Jacobian; ``points`` (nq, 2) are physical.
    """

    values: np.ndarray
    grads: np.ndarray
    hessians: np.ndarray | None
    weights: np.ndarray
    points: np.ndarray


@dataclass(eq=False)
class FeSpace:
    mesh: Mesh
    degree: int
    dof_coords: np.ndarray = field(repr=False)
    cell_dofs: np.ndarray = field(repr=False)
    interior_dofs: np.ndarray = field(repr=False)
    boundary_dofs: np.ndarray = field(repr=False)

    @property
    def n_dofs(self) -> int:
        return self.dof_coords.shape[0]

    @property
    def n_interior(self) -> int:
        return self.interior_dofs.shape[0]

    @property
    def quadrature_degree(self) -> int:
        return 2 * self.degree

    @cached_property
    def global_to_interior(self) -> np.ndarray:
        """Map global dof -> interior index, -1 on boundary dofs."""
        g = -np.ones(self.n_dofs, dtype=np.int64)
        g[self.interior_dofs] = np.arange(self.n_interior)
        return g

    @cached_property
    def jacobians(self):
        """Affine element maps: origin (nt, 2), J (nt, 2, 2), inverse, |det J|."""
        p = self.mesh.vertices[self.mesh.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        Jinv = np.linalg.inv(J)
        return p[:, 0], J, Jinv, np.abs(det)

    def tabulate_all(self, quad_degree=None, hessians=True) -> Tabulation:
        """Vectorized tabulation over every element.

        grads (nt, nq, nb, 2), hessians (nt, nq, nb, 3), weights (nt, nq),
        points (nt, nq, 2); values (nq, nb) are element independent.
        """
        if hessians and self.degree < 2:
            raise UnsupportedOperationError("hessians of P1 basis functions vanish identically")
        qp, qw = triangle_rule(quad_degree or self.quadrature_degree)
        vals, rgrad, rhess = reference_basis(self.degree, qp)
        origin, J, Jinv, adet = self.jacobians
        # grad_x = J^{-T} grad_ref
        grads = np.einsum("tki,qbk->tqbi", Jinv, rgrad)
        hess = None
        if hessians:
            H = np.empty(rhess.shape[:2] + (2, 2))
            H[..., 0, 0] = rhess[..., 0]
            H[..., 0, 1] = H[..., 1, 0] = rhess[..., 1]
            H[..., 1, 1] = rhess[..., 2]
            Hx = np.einsum("tki,qbkl,tlj->tqbij", Jinv, H, Jinv)
            hess = np.stack([Hx[..., 0, 0], Hx[..., 0, 1], Hx[..., 1, 1]], axis=-1)
        weights = adet[:, None] * qw[None, :]
        points = origin[:, None, :] + np.einsum("tij,qj->tqi", J, qp)
        return Tabulation(vals, grads, hess, weights, points)

    def tabulate(self, triangle_index: int, quad_degree=None, hessians=True) -> Tabulation:
        if not 0 <= triangle_index < self.mesh.n_triangles:
            raise InvalidArgumentError(f"triangle index {triangle_index} out of range")
        if hessians and self.degree < 2:
            raise UnsupportedOperationError("hessians of P1 basis functions vanish identically")
        qp, qw = triangle_rule(quad_degree or self.quadrature_degree)
        vals, rgrad, rhess = reference_basis(self.degree, qp)
        origin, J, Jinv, adet = (a[triangle_index] for a in self.jacobians)
        grads = np.einsum("ki,qbk->qbi", Jinv, rgrad)
        hess = None
        if hessians:
            H = np.empty(rhess.shape[:2] + (2, 2))
            H[..., 0, 0] = rhess[..., 0]
            H[..., 0, 1] = H[..., 1, 0] = rhess[..., 1]
            H[..., 1, 1] = rhess[..., 2]
            Hx = np.einsum("ki,qbkl,lj->qbij", Jinv, H, Jinv)
            hess = np.stack([Hx[..., 0, 0], Hx[..., 0, 1], Hx[..., 1, 1]], axis=-1)
        return Tabulation(vals, grads, hess, adet * qw, origin + qp @ J.T)

    def locate(self, point):
        """Triangle index and reference coordinates of ``point``."""
        x, y = float(point[0]), float(point[1])
        m = self.mesh
        tol = 1e-12
        if not (-tol <= x <= m.L + tol and -tol <= y <= 1.0 + tol):
            raise OutOfDomainError(f"point ({x}, {y}) lies outside [0, {m.L}] x [0, 1]")
        hx, hy = m.L / m.nx, 1.0 / m.ny
        i = min(max(int(x // hx), 0), m.nx - 1)
        j = min(max(int(y // hy), 0), m.ny - 1)
        sx, sy = x / hx - i, y / hy - j
        cell = j * m.nx + i
        t = 2 * cell if sy <= sx else 2 * cell + 1
        origin, _, Jinv, _ = self.jacobians
        ref = Jinv[t] @ (np.array([x, y]) - origin[t])
        return t, ref


@dataclass
class ScalarField:
    space: FeSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.n_interior,):
            raise InvalidArgumentError(
                f"expected {self.space.n_interior} interior coefficients, got {self.coeffs.shape}"
            )

    def full_coeffs(self) -> np.ndarray:
        full = np.zeros(self.space.n_dofs)
        full[self.space.interior_dofs] = self.coeffs
        return full

    def __neg__(self):
        return ScalarField(self.space, -self.coeffs)

    def __mul__(self, s):
        return ScalarField(self.space, s * self.coeffs)

    __rmul__ = __mul__


def build_space(mesh: Mesh, degree: int = 2) -> FeSpace:
    if degree not in SUPPORTED_DEGREES:
        raise InvalidArgumentError(f"degree must be one of {SUPPORTED_DEGREES}, got {degree}")
    r = degree
    nodes = _reference_nodes(r)
    p = mesh.vertices[mesh.triangles]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
    phys = p[:, 0][:, None, :] + np.einsum("tij,nj->tni", J, nodes)

    hx, hy = mesh.L / mesh.nx, 1.0 / mesh.ny
    gi = np.rint(phys[..., 0] * r / hx).astype(np.int64)
    gj = np.rint(phys[..., 1] * r / hy).astype(np.int64)
    ncols = r * mesh.nx + 1
    nrows = r * mesh.ny + 1
    cell_dofs = gj * ncols + gi

    I, Jg = np.meshgrid(np.arange(ncols), np.arange(nrows))
    I, Jg = I.ravel(), Jg.ravel()
    dof_coords = np.column_stack([I * hx / r, Jg * hy / r])
    on_bd = (I == 0) | (I == ncols - 1) | (Jg == 0) | (Jg == nrows - 1)
    return FeSpace(
        mesh=mesh,
        degree=r,
        dof_coords=dof_coords,
        cell_dofs=cell_dofs,
        interior_dofs=np.flatnonzero(~on_bd),
        boundary_dofs=np.flatnonzero(on_bd),
    )


def interpolate(space: FeSpace, f) -> ScalarField:
    """Lagrange interpolant of ``f(x, y)`` (vectorized over arrays).

    Boundary values of ``f`` are discarded: the space has zero trace.
    """
    xy = space.dof_coords[space.interior_dofs]
    vals = np.asarray(f(xy[:, 0], xy[:, 1]), dtype=float)
    vals = np.broadcast_to(vals, (xy.shape[0],)).copy()
    return ScalarField(space, vals)


def h1_seminorm(field: ScalarField) -> float:
    from vkplate.assembly import stiffness_of

    A = stiffness_of(field.space)
    c = field.coeffs
    return float(np.sqrt(max(c @ (A @ c), 0.0)))


def max_abs(field: ScalarField) -> tuple[float, int]:
    """Signed coefficient of largest magnitude and its global dof index."""
    c = field.coeffs
    if c.size == 0:
        return 0.0, -1
    k = int(np.argmax(np.abs(c)))
    return float(c[k]), int(field.space.interior_dofs[k])


def eval_field(field: ScalarField, point) -> float:
    space = field.space
    t, ref = space.locate(point)
    vals, _, _ = reference_basis(space.degree, ref[None, :])
    local = field.full_coeffs()[space.cell_dofs[t]]
    return float(vals[0] @ local)
