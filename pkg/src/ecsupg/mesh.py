"""Structured rectangular meshes, periodic in x and optionally in z.

Cells are numbered ``c = iz * nx + ix``.  Local facets of a cell are numbered
0 (left, x = x0), 1 (right), 2 (bottom, z = z0), 3 (top).  For every interior
facet the side with the lower cell index is labelled "+", and the stored normal
is the outward normal of that cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

LEFT, RIGHT, BOTTOM, TOP = 0, 1, 2, 3

_OUTWARD = {
    LEFT: (-1.0, 0.0),
    RIGHT: (1.0, 0.0),
    BOTTOM: (0.0, -1.0),
    TOP: (0.0, 1.0),
}


@dataclass(frozen=True)
class FacetSet:
    """A list of facets with their two adjacent cells.

    For boundary facets only the "+" arrays are meaningful and the "-" arrays
    are set to -1.
    """

    plus_cell: np.ndarray
    plus_local: np.ndarray
    minus_cell: np.ndarray
    minus_local: np.ndarray
    normal: np.ndarray  # (nfacets, 2), outward normal of the "+" cell
    orientation: str

    def __len__(self) -> int:
        return len(self.plus_cell)


@dataclass(frozen=True)
class Mesh:
    nx: int
    nz: int
    Lx: float
    Lz: float
    periodic_z: bool = False
    periodic_x: bool = field(default=True, init=False)

    @property
    def dx(self) -> float:
        return self.Lx / self.nx

    @property
    def dz(self) -> float:
        return self.Lz / self.nz

    @property
    def num_cells(self) -> int:
        return self.nx * self.nz

    def cell_index(self, ix, iz):
        return np.asarray(iz) * self.nx + np.asarray(ix)

    def cell_ij(self, cell):
        cell = np.asarray(cell)
        return cell % self.nx, cell // self.nx

    def cell_origins(self) -> np.ndarray:
        ix, iz = self.cell_ij(np.arange(self.num_cells))
        return np.stack([ix * self.dx, iz * self.dz], axis=1)

    @cached_property
    def vertical_facets(self) -> FacetSet:
        return _pair_facets(self, "vertical")

    @cached_property
    def horizontal_facets(self) -> FacetSet:
        return _pair_facets(self, "horizontal")

    @cached_property
    def boundary_facets(self) -> FacetSet:
        if self.periodic_z:
            empty = np.zeros(0, dtype=int)
            return FacetSet(empty, empty, empty, empty, np.zeros((0, 2)), "boundary")
        ix = np.arange(self.nx)
        bottom = self.cell_index(ix, 0)
        top = self.cell_index(ix, self.nz - 1)
        cells = np.concatenate([bottom, top])
        local = np.concatenate([np.full(self.nx, BOTTOM), np.full(self.nx, TOP)])
        normal = np.array([_OUTWARD[int(s)] for s in local])
        none = np.full(len(cells), -1)
        return FacetSet(cells, local, none, none.copy(), normal, "boundary")


def build_mesh(nx: int, nz: int, Lx: float, Lz: float, periodic_z: bool = False) -> Mesh:
    """Build a uniform ``nx`` by ``nz`` rectangular mesh of ``[0, Lx] x [0, Lz]``.

    Raises
    ------
    ValueError
        If a cell count is below 2 (a periodic wrap would glue a cell to
        itself) or an extent is not positive.
    """
    if int(nx) != nx or int(nz) != nz:
        raise ValueError("cell counts must be integers")
    if nx < 2 or nz < 2:
        raise ValueError(f"need nx >= 2 and nz >= 2, got nx={nx}, nz={nz}")
    if not (Lx > 0 and Lz > 0):
        raise ValueError(f"domain extents must be positive, got Lx={Lx}, Lz={Lz}")
    return Mesh(int(nx), int(nz), float(Lx), float(Lz), bool(periodic_z))


def _pair_facets(mesh: Mesh, orientation: str) -> FacetSet:
    nx, nz = mesh.nx, mesh.nz
    if orientation == "vertical":
        iz, ix = np.meshgrid(np.arange(nz), np.arange(nx), indexing="ij")
        ix, iz = ix.ravel(), iz.ravel()
        a = mesh.cell_index(ix, iz)  # cell left of the facet
        b = mesh.cell_index((ix + 1) % nx, iz)
        a_side, b_side = RIGHT, LEFT
    elif orientation == "horizontal":
        top = nz if mesh.periodic_z else nz - 1
        iz, ix = np.meshgrid(np.arange(top), np.arange(nx), indexing="ij")
        ix, iz = ix.ravel(), iz.ravel()
        a = mesh.cell_index(ix, iz)  # cell below the facet
        b = mesh.cell_index(ix, (iz + 1) % nz)
        a_side, b_side = TOP, BOTTOM
    else:
        raise ValueError(f"unknown orientation {orientation!r}")
    a_plus = a < b
    plus = np.where(a_plus, a, b)
    minus = np.where(a_plus, b, a)
    plus_local = np.where(a_plus, a_side, b_side)
    minus_local = np.where(a_plus, b_side, a_side)
    normal = np.array([_OUTWARD[int(s)] for s in plus_local]).reshape(-1, 2)
    return FacetSet(plus, plus_local, minus, minus_local, normal, orientation)


def interior_facets(mesh: Mesh, orientation: str = "all") -> FacetSet:
    """Return the vertical, horizontal or all interior facets of ``mesh``."""
    if orientation == "vertical":
        return mesh.vertical_facets
    if orientation == "horizontal":
        return mesh.horizontal_facets
    if orientation in ("all", "all-interior"):
        v, h = mesh.vertical_facets, mesh.horizontal_facets
        return FacetSet(
            np.concatenate([v.plus_cell, h.plus_cell]),
            np.concatenate([v.plus_local, h.plus_local]),
            np.concatenate([v.minus_cell, h.minus_cell]),
            np.concatenate([v.minus_local, h.minus_local]),
            np.concatenate([v.normal, h.normal]),
            "all-interior",
        )
    if orientation == "boundary":
        return mesh.boundary_facets
    raise ValueError(f"unknown orientation {orientation!r}")


def cell_geometry(mesh: Mesh, cell: int):
    """Return ``(origin, jacobian, measure)`` of the affine map of ``cell``
    from the reference square ``[0, 1]^2``."""
    if not 0 <= cell < mesh.num_cells:
        raise IndexError(f"cell {cell} out of range for {mesh.num_cells} cells")
    ix, iz = mesh.cell_ij(cell)
    origin = np.array([ix * mesh.dx, iz * mesh.dz])
    jac = np.diag([mesh.dx, mesh.dz])
    return origin, jac, mesh.dx * mesh.dz
