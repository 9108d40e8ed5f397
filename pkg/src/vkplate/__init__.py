"""Finite-element and reduced-basis tools for buckling of Von Karman plates."""

from vkplate.mesh import Mesh, build_mesh, mesh_size
from vkplate.fespace import FeSpace, ScalarField, build_space

__all__ = ["Mesh", "build_mesh", "mesh_size", "FeSpace", "ScalarField", "build_space"]

__version__ = "0.1.0"
