"""Sparse assembly of the bilinear and trilinear forms on interior dofs.

Matrices are ``scipy.sparse.csr_matrix`` with sorted, unique column indices.
Entry (i, j) always pairs test function i with trial function j.
"""

import weakref

import numpy as np
import scipy.sparse as sp

from vkplate.errors import InvalidArgumentError, UnsupportedOperationError
from vkplate.fespace import FeSpace, ScalarField

_ASSEMBLERS: "weakref.WeakKeyDictionary[FeSpace, Assembler]" = weakref.WeakKeyDictionary()


class Assembler:
    """Caches tabulations and the CSR sparsity pattern of one space."""

    def __init__(self, space: FeSpace, full: bool = False):
        self.space = space
        self.full = full
        self.tab = space.tabulate_all(hessians=space.degree >= 2)
        cd = space.cell_dofs
        nb = cd.shape[1]
        rows = np.repeat(cd, nb, axis=1).ravel()  # test index i
        cols = np.tile(cd, (1, nb)).ravel()  # trial index j
        if full:
            n = space.n_dofs
            keep = np.ones(rows.shape, dtype=bool)
        else:
            g2i = space.global_to_interior
            rows, cols = g2i[rows], g2i[cols]
            keep = (rows >= 0) & (cols >= 0)
            n = space.n_interior
        self.n = n
        self.keep = keep
        keys = rows[keep] * n + cols[keep]
        ukeys, self.slot = np.unique(keys, return_inverse=True)
        self.indices = (ukeys % n).astype(np.int32)
        urows = ukeys // n
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(urows, minlength=n))]).astype(np.int32)
        self.nnz = ukeys.size

    def scatter(self, local: np.ndarray) -> sp.csr_matrix:
        """Sum element matrices ``local`` (nt, nb, nb) into CSR."""
        data = np.bincount(self.slot, weights=local.reshape(-1)[self.keep], minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))

    def hessian_at_quad(self, full_coeffs: np.ndarray) -> np.ndarray:
        """Physical hessian (nt, nq, 3) of a field given by all-dof coefficients."""
        local = full_coeffs[self.space.cell_dofs]
        return np.einsum("tb,tqbk->tqk", local, self.tab.hessians)


def assembler(space: FeSpace, full: bool = False) -> Assembler:
    if full:
        return Assembler(space, full=True)
    a = _ASSEMBLERS.get(space)
    if a is None:
        a = _ASSEMBLERS[space] = Assembler(space)
    return a


def _bracket(p, q):
    """Monge-Ampere bracket of hessians stored as (xx, xy, yy) in the last axis."""
    return p[..., 0] * q[..., 2] - 2.0 * p[..., 1] * q[..., 1] + p[..., 2] * q[..., 0]


def _grad_grad(space, weight=None, components=(0, 1), full=False):
    asm = assembler(space, full)
    g = asm.tab.grads
    w = asm.tab.weights if weight is None else asm.tab.weights * weight
    local = sum(np.einsum("tq,tqi,tqj->tij", w, g[..., k], g[..., k]) for k in components)
    return asm.scatter(local)


def assemble_stiffness(space: FeSpace, full: bool = False) -> sp.csr_matrix:
    """(A)_ij = int grad E_j . grad E_i."""
    return _grad_grad(space, full=full)


def assemble_directional_stiffness(space: FeSpace, direction: str, full: bool = False) -> sp.csr_matrix:
    """int d_k E_j d_k E_i for k = 'x' or 'y'."""
    k = {"x": 0, "y": 1}[direction]
    return _grad_grad(space, components=(k,), full=full)


def assemble_mass(space: FeSpace, full: bool = False) -> sp.csr_matrix:
    """(B)_ij = int E_j E_i."""
    asm = assembler(space, full)
    v = asm.tab.values
    local = np.einsum("tq,qi,qj->tij", asm.tab.weights, v, v)
    return asm.scatter(local)


def load_weight(space: FeSpace, psi: float, points: np.ndarray) -> np.ndarray:
    """In-plane compression profile 1 - psi*y/L of the linearly varying edge load."""
    return 1.0 - psi * points[..., 1] / space.mesh.L


def assemble_load_matrix(space: FeSpace, psi: float = 0.0) -> sp.csr_matrix:
    """(D(psi))_ij = int (1 - psi*y/L) dx E_j dx E_i."""
    if not 0.0 <= psi <= 2.0:
        import warnings

        warnings.warn(f"load parameter psi={psi} outside the usual range [0, 2]", stacklevel=2)
    asm = assembler(space)
    return _grad_grad(space, weight=load_weight(space, psi, asm.tab.points), components=(0,))


def assemble_load_pair(space: FeSpace) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Affine split D(psi) = D0 - psi * D1 with D1 = int (y/L) dx E_j dx E_i."""
    asm = assembler(space)
    d0 = _grad_grad(space, components=(0,))
    d1 = _grad_grad(space, weight=asm.tab.points[..., 1] / space.mesh.L, components=(0,))
    return d0, d1


def _require_hessians(space):
    if space.degree < 2:
        raise UnsupportedOperationError("the Monge-Ampere bracket needs degree >= 2")


def _check_field(space, z):
    if isinstance(z, ScalarField):
        if z.space is not space:
            raise InvalidArgumentError("field lives on a different space")
        return z.full_coeffs()
    z = np.asarray(z, dtype=float)
    if z.shape == (space.n_interior,):
        full = np.zeros(space.n_dofs)
        full[space.interior_dofs] = z
        return full
    if z.shape == (space.n_dofs,):
        return z
    raise InvalidArgumentError(f"coefficient vector of shape {z.shape} does not fit the space")


def assemble_bracket(space: FeSpace, z, slot: int = 1) -> sp.csr_matrix:
    """M(z)_ij = int [z, E_j] E_i.

    ``slot=2`` assembles int [E_j, z] E_i instead; the two agree because the
    bracket is symmetric, which is what lets one matrix serve as both C1 and C3.
    """
    _require_hessians(space)
    asm = assembler(space)
    Hz = asm.hessian_at_quad(_check_field(space, z))[:, :, None, :]
    H = asm.tab.hessians
    br = _bracket(Hz, H) if slot == 1 else _bracket(H, Hz)
    local = np.einsum("tq,qi,tqj->tij", asm.tab.weights, asm.tab.values, br)
    return asm.scatter(local)


def bracket_form(space: FeSpace, z, y) -> np.ndarray:
    """Vector with entries int [z, y] E_i."""
    _require_hessians(space)
    asm = assembler(space)
    Hz = asm.hessian_at_quad(_check_field(space, z))
    Hy = asm.hessian_at_quad(_check_field(space, y))
    local = np.einsum("tq,qi,tq->ti", asm.tab.weights, asm.tab.values, _bracket(Hz, Hy))
    g2i = space.global_to_interior[space.cell_dofs].ravel()
    keep = g2i >= 0
    return np.bincount(g2i[keep], weights=local.ravel()[keep], minlength=space.n_interior)


def assemble_hessian_mass(space: FeSpace, component: str) -> sp.csr_matrix:
    """int d_kk E_j E_i for component 'xx', 'xy' or 'yy'."""
    _require_hessians(space)
    k = {"xx": 0, "xy": 1, "yy": 2}[component]
    asm = assembler(space)
    local = np.einsum("tq,qi,tqj->tij", asm.tab.weights, asm.tab.values, asm.tab.hessians[..., k])
    return asm.scatter(local)


def assemble_load_shape_bracket(space: FeSpace, load_shape) -> sp.csr_matrix:
    """c(h, E_j, E_i) for a load shape h given as a callable with hessian.

    ``load_shape(x, y)`` returns the hessian triple (h_xx, h_xy, h_yy) evaluated
    pointwise, so no interpolation error enters the comparison with D(psi).
    """
    _require_hessians(space)
    asm = assembler(space)
    pts = asm.tab.points
    hxx, hxy, hyy = (np.broadcast_to(np.asarray(c, dtype=float), pts.shape[:2]) for c in load_shape(pts[..., 0], pts[..., 1]))
    Hh = np.stack([hxx, hxy, hyy], axis=-1)[:, :, None, :]
    local = np.einsum("tq,qi,tqj->tij", asm.tab.weights, asm.tab.values, _bracket(Hh, asm.tab.hessians))
    return asm.scatter(local)


def stiffness_of(space: FeSpace) -> sp.csr_matrix:
    asm = assembler(space)
    if not hasattr(asm, "_stiffness"):
        asm._stiffness = assemble_stiffness(space)
    return asm._stiffness


def mass_of(space: FeSpace) -> sp.csr_matrix:
    asm = assembler(space)
    if not hasattr(asm, "_mass"):
        asm._mass = assemble_mass(space)
    return asm._mass


def write_coo(matrix, path) -> None:
    """Debug export: one 'row col value' line per stored entry."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"% {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")
