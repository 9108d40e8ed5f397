"""Structured triangulations of the rectangle [0, L] x [0, 1]."""

from dataclasses import dataclass, field

import numpy as np

from vkplate.errors import InvalidArgumentError


@dataclass(frozen=True)
class Mesh:
    L: float
    nx: int
    ny: int
    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    boundary_vertices: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs."""
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)


def build_mesh(L: float, nx: int, ny: int) -> Mesh:
    """Uniform nx x ny grid of rectangles, each cut along its lower-left to
    upper-right diagonal into two counter-clockwise triangles."""
    if not np.isfinite(L) or L <= 0:
        raise InvalidArgumentError(f"domain length must be positive, got {L}")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgumentError(f"subdivisions must be positive integers, got ({nx}, {ny})")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, L, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row j <-> y_j
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    on_bd = (
        np.isclose(vertices[:, 0], 0.0)
        | np.isclose(vertices[:, 0], L)
        | np.isclose(vertices[:, 1], 0.0)
        | np.isclose(vertices[:, 1], 1.0)
    )
    return Mesh(float(L), nx, ny, vertices, triangles, np.flatnonzero(on_bd))


def mesh_size(mesh: Mesh) -> float:
    """Maximum edge length over all triangles."""
    e = mesh.edges()
    d = mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]]
    return float(np.sqrt((d**2).sum(axis=1)).max())


def subdivisions_for(L: float, target_size: float) -> tuple[int, int]:
    """Square-cell grid (nx = L*ny) whose mesh size sqrt(2)/ny is nearest to
    ``target_size``."""
    if target_size <= 0:
        raise InvalidArgumentError("target mesh size must be positive")
    ny = max(1, int(round(np.sqrt(2.0) / target_size)))
    nx = max(1, int(round(L * ny)))
    return nx, ny
