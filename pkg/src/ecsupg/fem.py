"""Tensor-product compatible finite element spaces on structured meshes.

All spaces are built from two 1D Lagrange elements, one per direction:
continuous ones use Gauss-Lobatto nodes, discontinuous ones Gauss-Legendre
nodes.  With ``k`` the degree of the continuous vorticity space:

* ``CG(k)``  : Q_k, continuous
* ``DG(k)``  : Q_k, discontinuous
* ``RT(k)``  : x-component CG_k(x) x DG_{k-1}(z), z-component DG_{k-1}(x) x CG_k(z)
* ``CP(k)``  : DG_{k-1}(x) x CG_k(z), the z-component layout of ``RT(k)``

so that ``grad_perp CG(k) -> RT(k) -> DG(k-1)`` is a discrete complex.

Velocity degrees of freedom are nodal values of the physical velocity
components.  On axis-aligned rectangles the contravariant Piola map only
rescales each component by a constant, so this spans the same space as the
Piola-mapped Raviart-Thomas element.

Reference cells are ``[0, 1]^2``.  Inside a cell, tensor point sets are
ordered with z outermost, ``p = jz * npx + jx``, and so are local dofs.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre as npleg

from .mesh import BOTTOM, LEFT, RIGHT, TOP, FacetSet, Mesh


# --------------------------------------------------------------------------
# Quadrature
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadRule:
    """Tensor Gauss-Legendre rule on ``[-1, 1]^dim``."""

    points: np.ndarray  # (npts, dim)
    weights: np.ndarray  # (npts,)
    degree: int  # exact for polynomials of this degree per direction

    def on_unit_interval(self):
        """Points and weights mapped to ``[0, 1]^dim``."""
        dim = self.points.shape[1]
        return 0.5 * (self.points + 1.0), self.weights * 0.5**dim


def gauss_legendre(n: int, dim: int = 1) -> QuadRule:
    if not 1 <= n <= 10:
        raise ValueError(f"number of points must be in [1, 10], got {n}")
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    x, w = npleg.leggauss(n)
    if dim == 1:
        return QuadRule(x[:, None], w, 2 * n - 1)
    zz, xx = np.meshgrid(x, x, indexing="ij")
    pts = np.stack([xx.ravel(), zz.ravel()], axis=1)
    return QuadRule(pts, np.outer(w, w).ravel(), 2 * n - 1)


def _gauss_lobatto(n: int) -> np.ndarray:
    """``n`` Gauss-Lobatto points on [-1, 1]."""
    if n == 2:
        return np.array([-1.0, 1.0])
    inner = npleg.Legendre.basis(n - 1).deriv().roots()
    return np.concatenate([[-1.0], np.sort(inner.real), [1.0]])


# --------------------------------------------------------------------------
# 1D elements
# --------------------------------------------------------------------------


class Element1D:
    """Lagrange element of a given degree on the reference interval [0, 1]."""

    def __init__(self, degree: int, continuous: bool):
        if degree < 0 or (continuous and degree < 1):
            raise ValueError(f"unsupported degree {degree} (continuous={continuous})")
        self.degree = degree
        self.continuous = continuous
        if continuous:
            t = _gauss_lobatto(degree + 1)
        else:
            t = npleg.leggauss(degree + 1)[0]
        self.nodes = 0.5 * (t + 1.0)
        vander = npleg.legvander(2 * self.nodes - 1, degree)
        self._coef = np.linalg.inv(vander)  # column a: Legendre coefficients of basis a

    @property
    def ndofs(self) -> int:
        return self.degree + 1

    def tabulate(self, x):
        """Values and first derivatives of all basis functions at ``x``."""
        t = 2 * np.asarray(x, dtype=float) - 1
        vals = npleg.legvander(t, self.degree) @ self._coef
        dvander = np.zeros((len(t), self.degree + 1))
        for m in range(1, self.degree + 1):
            cm = np.zeros(m + 1)
            cm[m] = 1.0
            dvander[:, m] = 2.0 * npleg.legval(t, npleg.legder(cm))
        return vals, dvander @ self._coef

    def dofmap(self, ncells: int, periodic: bool):
        """Global numbering ``(ncells, ndofs)`` and the global count."""
        c = np.arange(ncells)[:, None]
        a = np.arange(self.ndofs)[None, :]
        if self.continuous:
            p = self.degree
            total = ncells * p if periodic else ncells * p + 1
            idx = c * p + a
            if periodic:
                idx = idx % total
        else:
            total = ncells * self.ndofs
            idx = c * self.ndofs + a
        return idx, total

    def node_coords(self, ncells: int, periodic: bool, h: float) -> np.ndarray:
        idx, total = self.dofmap(ncells, periodic)
        coords = np.empty(total)
        x = (np.arange(ncells)[:, None] + self.nodes[None, :]) * h
        coords[idx.ravel()] = x.ravel()
        if periodic and self.continuous:
            coords = np.mod(coords, ncells * h)
        return coords


# --------------------------------------------------------------------------
# Spaces
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SpaceFamily:
    kind: str  # "CG", "DG", "RT", "CP"
    degree: int

    def __post_init__(self):
        if self.kind not in ("CG", "DG", "RT", "CP"):
            raise ValueError(f"unknown family {self.kind!r}")
        minimum = 0 if self.kind == "DG" else 1
        if self.degree < minimum:
            raise ValueError(f"{self.kind} needs degree >= {minimum}, got {self.degree}")

    def __str__(self):
        return f"{self.kind}({self.degree})"

    @classmethod
    def parse(cls, text: str) -> "SpaceFamily":
        kind, deg = text.strip().rstrip(")").split("(")
        return cls(kind, int(deg))


def CG(k):
    return SpaceFamily("CG", k)


def DG(k):
    return SpaceFamily("DG", k)


def RT(k):
    return SpaceFamily("RT", k)


def CP(k):
    return SpaceFamily("CP", k)


class _Component:
    """One scalar tensor-product component of a space."""

    def __init__(self, mesh: Mesh, ex: Element1D, ez: Element1D, offset: int):
        self.ex, self.ez = ex, ez
        mx, self.nxg = ex.dofmap(mesh.nx, True)
        mz, self.nzg = ez.dofmap(mesh.nz, mesh.periodic_z)
        self.ndofs = self.nxg * self.nzg
        self.offset = offset
        ix, iz = mesh.cell_ij(np.arange(mesh.num_cells))
        # local dof (bz, ax) -> global iz_g * nxg + ix_g
        g = mz[iz][:, :, None] * self.nxg + mx[ix][:, None, :]
        self.cell_dofs = g.reshape(mesh.num_cells, -1) + offset
        xs = ex.node_coords(mesh.nx, True, mesh.dx)
        zs = ez.node_coords(mesh.nz, mesh.periodic_z, mesh.dz)
        zz, xx = np.meshgrid(zs, xs, indexing="ij")
        self.coords = np.stack([xx.ravel(), zz.ravel()], axis=1)
        self._zindex = np.repeat(np.arange(self.nzg), self.nxg)

    @property
    def nloc(self):
        return self.ex.ndofs * self.ez.ndofs

    def tabulate(self, px, pz):
        """(values, d/dxi, d/deta) at the tensor points ``px x pz``, shape (npts, nloc)."""
        vx, dx = self.ex.tabulate(px)
        vz, dz = self.ez.tabulate(pz)
        # point p = jz * npx + jx ; dof a = bz * nax + ax
        val = np.einsum("jb,ia->jiba", vz, vx)
        dxi = np.einsum("jb,ia->jiba", vz, dx)
        deta = np.einsum("jb,ia->jiba", dz, vx)
        npts = len(px) * len(pz)
        return (
            val.reshape(npts, -1),
            dxi.reshape(npts, -1),
            deta.reshape(npts, -1),
        )

    def wall_dofs(self):
        """Global dofs on z = 0 or z = Lz (only for z-continuous, non-periodic)."""
        if not self.ez.continuous:
            return np.zeros(0, dtype=int)
        mask = (self._zindex == 0) | (self._zindex == self.nzg - 1)
        return np.flatnonzero(mask) + self.offset


class FiniteElementSpace:
    """A compatible space on a structured mesh.

    Attributes
    ----------
    ndofs : int
        Number of global degrees of freedom.
    cell_dofs : ndarray (ncells, nloc)
        Cell to global dof map (x-component dofs first for ``RT``).
    """

    def __init__(self, mesh: Mesh, family: SpaceFamily):
        self.mesh = mesh
        self.family = family
        k = family.degree
        if family.kind == "CG":
            pairs = [(Element1D(k, True), Element1D(k, True))]
        elif family.kind == "DG":
            pairs = [(Element1D(k, False), Element1D(k, False))]
        elif family.kind == "CP":
            pairs = [(Element1D(k - 1, False), Element1D(k, True))]
        else:
            pairs = [
                (Element1D(k, True), Element1D(k - 1, False)),
                (Element1D(k - 1, False), Element1D(k, True)),
            ]
        self.components = []
        offset = 0
        for ex, ez in pairs:
            comp = _Component(mesh, ex, ez, offset)
            self.components.append(comp)
            offset += comp.ndofs
        self.ndofs = offset
        self.cell_dofs = np.concatenate([c.cell_dofs for c in self.components], axis=1)

    @property
    def is_vector(self) -> bool:
        return self.family.kind == "RT"

    @property
    def nloc(self) -> int:
        return self.cell_dofs.shape[1]

    def __repr__(self):
        m = self.mesh
        return f"FiniteElementSpace({self.family}, {m.nx}x{m.nz}, ndofs={self.ndofs})"

    @cached_property
    def dof_coords(self) -> np.ndarray:
        return np.concatenate([c.coords for c in self.components], axis=0)

    @cached_property
    def dof_component(self) -> np.ndarray:
        return np.concatenate(
            [np.full(c.ndofs, i) for i, c in enumerate(self.components)]
        )

    @cached_property
    def wall_dofs(self) -> np.ndarray:
        """Dofs fixed by a rigid-lid/no-flux condition at z walls.

        For ``RT`` these are the normal (z) components on the top and bottom
        boundary; scalar spaces have none.
        """
        if self.mesh.periodic_z or self.family.kind != "RT":
            return np.zeros(0, dtype=int)
        return self.components[1].wall_dofs()

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.ndofs, dtype=bool)
        mask[self.wall_dofs] = False
        return np.flatnonzero(mask)

    # ----------------------------------------------------------------
    # local tabulation
    # ----------------------------------------------------------------

    def reference_tabulation(self, px, pz):
        """Physical-derivative tabulation at tensor reference points.

        Returns a dict of ``(npts, nloc)`` arrays.  Scalar spaces give keys
        ``val, dx, dz``; ``RT`` gives ``x, z, x_dx, x_dz, z_dx, z_dz, div``
        where the x-component columns vanish on z-component dofs and vice versa.
        """
        hx, hz = self.mesh.dx, self.mesh.dz
        tabs = [c.tabulate(px, pz) for c in self.components]
        if not self.is_vector:
            v, dxi, deta = tabs[0]
            return {"val": v, "dx": dxi / hx, "dz": deta / hz}
        (vx, dxx, dxz), (vz, dzx, dzz) = tabs
        npts = vx.shape[0]
        zx = np.zeros((npts, vz.shape[1]))
        zz = np.zeros((npts, vx.shape[1]))
        out = {
            "x": np.hstack([vx, zx]),
            "z": np.hstack([zz, vz]),
            "x_dx": np.hstack([dxx / hx, zx]),
            "x_dz": np.hstack([dxz / hz, zx]),
            "z_dx": np.hstack([zz, dzx / hx]),
            "z_dz": np.hstack([zz, dzz / hz]),
        }
        out["div"] = out["x_dx"] + out["z_dz"]
        return out

    # ----------------------------------------------------------------
    # global operators
    # ----------------------------------------------------------------

    def global_operator(self, tab: np.ndarray, cells: np.ndarray) -> sp.csr_matrix:
        """Sparse map from global coefficients to values at points of ``cells``.

        ``tab`` has shape (npts, nloc); rows are ordered ``i * npts + p`` for
        the i-th entry of ``cells``.
        """
        npts = tab.shape[0]
        n = len(cells)
        rows = (np.arange(n)[:, None, None] * npts + np.arange(npts)[None, :, None])
        rows = np.broadcast_to(rows, (n, npts, self.nloc))
        cols = np.broadcast_to(self.cell_dofs[cells][:, None, :], (n, npts, self.nloc))
        data = np.broadcast_to(tab[None], (n, npts, self.nloc))
        keep = data != 0.0
        mat = sp.csr_matrix(
            (data[keep], (rows[keep], cols[keep])), shape=(n * npts, self.ndofs)
        )
        mat.sort_indices()
        return mat


def make_space(mesh: Mesh, family: SpaceFamily) -> FiniteElementSpace:
    return FiniteElementSpace(mesh, family)


# --------------------------------------------------------------------------
# Fields
# --------------------------------------------------------------------------


@dataclass
class Field:
    space: FiniteElementSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != (self.space.ndofs,):
            raise ValueError(
                f"coefficient vector has shape {self.coeffs.shape}, "
                f"expected ({self.space.ndofs},)"
            )

    def copy(self) -> "Field":
        return Field(self.space, self.coeffs.copy())


@dataclass(frozen=True)
class BasisTable:
    """Basis data at the points of a rule on the reference cell.

    ``values`` is (npts, nloc) for scalars and (npts, nloc, 2) for RT;
    ``gradients`` appends a trailing axis of length 2 (d/dx, d/dz).
    """

    points: np.ndarray
    values: np.ndarray
    gradients: np.ndarray


def tabulate_basis(space: FiniteElementSpace, rule: QuadRule) -> BasisTable:
    pts, _ = rule.on_unit_interval()
    n = int(round(np.sqrt(len(pts))))
    line = np.unique(pts[:, 0])
    if len(line) != n:
        raise ValueError("tabulate_basis needs a tensor rule")
    tab = space.reference_tabulation(line, line)
    if space.is_vector:
        values = np.stack([tab["x"], tab["z"]], axis=-1)
        grads = np.stack(
            [
                np.stack([tab["x_dx"], tab["x_dz"]], axis=-1),
                np.stack([tab["z_dx"], tab["z_dz"]], axis=-1),
            ],
            axis=-2,
        )
    else:
        values = tab["val"]
        grads = np.stack([tab["dx"], tab["dz"]], axis=-1)
    return BasisTable(pts, values, grads)


def interpolate(space: FiniteElementSpace, f) -> Field:
    """Nodal interpolant of ``f(x, z)``.

    For ``RT`` spaces ``f`` returns ``(u_x, u_z)``; the x-component is sampled
    at x-component nodes and the z-component at z-component nodes.
    """
    coeffs = np.empty(space.ndofs)
    for i, comp in enumerate(space.components):
        x, z = comp.coords[:, 0], comp.coords[:, 1]
        vals = f(x, z)
        if space.is_vector:
            vals = vals[i]
        sl = slice(comp.offset, comp.offset + comp.ndofs)
        coeffs[sl] = np.broadcast_to(np.asarray(vals, dtype=float), (comp.ndofs,))
    return Field(space, coeffs)


def evaluate_field(field: Field, cell: int, ref_points, gradients: bool = False):
    """Evaluate ``field`` at points of the reference cell ``[0,1]^2`` of ``cell``.

    Returns values of shape (npts,) or (npts, 2) for RT, and optionally
    physical gradients with a trailing axis of length 2.
    """
    space = field.space
    if not 0 <= cell < space.mesh.num_cells:
        raise IndexError(f"cell {cell} out of range")
    ref_points = np.atleast_2d(np.asarray(ref_points, dtype=float))
    c = field.coeffs[space.cell_dofs[cell]]
    vals, grads = [], []
    for p in ref_points:
        tab = space.reference_tabulation([p[0]], [p[1]])
        if space.is_vector:
            vals.append([tab["x"][0] @ c, tab["z"][0] @ c])
            grads.append(
                [[tab["x_dx"][0] @ c, tab["x_dz"][0] @ c], [tab["z_dx"][0] @ c, tab["z_dz"][0] @ c]]
            )
        else:
            vals.append(tab["val"][0] @ c)
            grads.append([tab["dx"][0] @ c, tab["dz"][0] @ c])
    vals = np.array(vals)
    if gradients:
        return vals, np.array(grads)
    return vals


def locate(mesh: Mesh, x, z):
    """Cell index and reference coordinates of physical points."""
    x = np.mod(np.asarray(x, dtype=float), mesh.Lx)
    z = np.asarray(z, dtype=float)
    if mesh.periodic_z:
        z = np.mod(z, mesh.Lz)
    ix = np.minimum((x / mesh.dx).astype(int), mesh.nx - 1)
    iz = np.clip((z / mesh.dz).astype(int), 0, mesh.nz - 1)
    xi = x / mesh.dx - ix
    eta = z / mesh.dz - iz
    return mesh.cell_index(ix, iz), np.stack([xi, eta], axis=-1)


# --------------------------------------------------------------------------
# Facet point sets
# --------------------------------------------------------------------------


def facet_reference_points(local: int, line: np.ndarray):
    """Tensor reference points (px, pz) of a local facet, ordered along the facet."""
    if local == LEFT:
        return np.array([0.0]), line
    if local == RIGHT:
        return np.array([1.0]), line
    if local == BOTTOM:
        return line, np.array([0.0])
    if local == TOP:
        return line, np.array([1.0])
    raise ValueError(f"bad local facet {local}")


def facet_operator(space: FiniteElementSpace, facets: FacetSet, side: str, line, key: str):
    """Global sparse trace operator on one side of a facet set.

    Rows are ordered ``facet * nfq + p``.
    """
    cells = facets.plus_cell if side == "+" else facets.minus_cell
    locals_ = facets.plus_local if side == "+" else facets.minus_local
    nfq = len(line)
    blocks = []
    for loc in (LEFT, RIGHT, BOTTOM, TOP):
        sel = np.flatnonzero(locals_ == loc)
        if len(sel) == 0:
            continue
        px, pz = facet_reference_points(loc, line)
        tab = space.reference_tabulation(px, pz)[key]
        op = space.global_operator(tab, cells[sel]).tocoo()
        f_of_row = sel[op.row // nfq]
        rows = f_of_row * nfq + op.row % nfq
        blocks.append((rows, op.col, op.data))
    if not blocks:
        return sp.csr_matrix((0, space.ndofs))
    rows = np.concatenate([b[0] for b in blocks])
    cols = np.concatenate([b[1] for b in blocks])
    data = np.concatenate([b[2] for b in blocks])
    mat = sp.csr_matrix((data, (rows, cols)), shape=(len(facets) * nfq, space.ndofs))
    mat.sort_indices()
    return mat
