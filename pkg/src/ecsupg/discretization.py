"""Quadrature-point evaluation machinery shared by all assemblies.

A :class:`Discretization` bundles the four compatible spaces of a model
(vorticity ``q``, velocity ``u``, density ``r``, thermal ``t``), a tensor
Gauss-Legendre rule with ``k + 2`` points per direction, and sparse operators
that map global coefficient vectors to values at all volume or facet
quadrature points.  Every weak form is then a short expression such as
``E.T @ (W * f)``.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import CG, CP, DG, RT, FiniteElementSpace, facet_operator, make_space
from .mesh import Mesh

EULER = "euler"
SWE = "swe"
MODELS = (EULER, SWE)


class Discretization:
    """Spaces, quadrature and evaluation operators for one mesh and model.

    Parameters
    ----------
    mesh : Mesh
        Vertical slices use walls in z, the planar shallow water model a
        doubly periodic mesh.
    k : int
        Degree of the continuous vorticity space; velocity is ``RT(k)``,
        density ``DG(k-1)``.
    model : {"euler", "swe"}
        Selects the thermal space: ``CP(k)`` for Euler, ``CG(k)`` otherwise.
    """

    def __init__(self, mesh: Mesh, k: int, model: str):
        if model not in MODELS:
            raise ValueError(f"unknown model {model!r}")
        if k < 1:
            raise ValueError("degree must be at least 1")
        self.mesh, self.k, self.model = mesh, k, model
        self.spaces = {
            "q": make_space(mesh, CG(k)),
            "u": make_space(mesh, RT(k)),
            "r": make_space(mesh, DG(k - 1)),
        }
        self.spaces["t"] = make_space(mesh, CP(k)) if model == EULER else self.spaces["q"]
        self.nq = k + 2
        x, w = np.polynomial.legendre.leggauss(self.nq)
        self.line, self.wline = 0.5 * (x + 1.0), 0.5 * w
        ncell = mesh.num_cells
        w2 = np.outer(self.wline, self.wline).ravel()
        self.W = np.tile(w2 * mesh.dx * mesh.dz, ncell)
        org = mesh.cell_origins()
        zz, xx = np.meshgrid(self.line, self.line, indexing="ij")
        self.X = (org[:, 0:1] + xx.ravel()[None, :] * mesh.dx).ravel()
        self.Z = (org[:, 1:2] + zz.ravel()[None, :] * mesh.dz).ravel()
        self._vol = {}
        self._trace = {}
        self.cache = {}
        self.facets = {
            "v": mesh.vertical_facets,
            "h": mesh.horizontal_facets,
            "b": mesh.boundary_facets,
        }
        self.Wf, self.normal = {}, {}
        for name, fs in self.facets.items():
            length = mesh.dz if name == "v" else mesh.dx
            self.Wf[name] = np.tile(self.wline * length, len(fs))
            self.normal[name] = np.repeat(fs.normal, self.nq, axis=0).reshape(-1, 2)

    @property
    def is_euler(self) -> bool:
        return self.model == EULER

    @property
    def theta_is_cp(self) -> bool:
        return self.spaces["t"].family.kind == "CP"

    def __repr__(self):
        m = self.mesh
        return f"Discretization({self.model}, k={self.k}, {m.nx}x{m.nz})"

    # ------------------------------------------------------------------
    # evaluation operators
    # ------------------------------------------------------------------

    def E(self, space: str, key: str) -> sp.csr_matrix:
        """Volume evaluation operator of ``key`` for space ``space``."""
        tag = (space, key)
        if tag not in self._vol:
            sp_ = self.spaces[space]
            tab = sp_.reference_tabulation(self.line, self.line)
            for kk, t in tab.items():
                self._vol[(space, kk)] = sp_.global_operator(t, np.arange(self.mesh.num_cells))
        return self._vol[tag]

    def T(self, space: str, fset: str, side: str, key: str) -> sp.csr_matrix:
        """Facet trace operator on the ``side`` ("+" or "-") of facet set ``fset``."""
        tag = (space, fset, side, key)
        if tag not in self._trace:
            self._trace[tag] = facet_operator(
                self.spaces[space], self.facets[fset], side, self.line, key
            )
        return self._trace[tag]

    def interior_sets(self):
        """Names of non-empty interior facet sets."""
        return [s for s in ("v", "h") if len(self.facets[s]) > 0]

    @property
    def boundary(self) -> bool:
        return len(self.facets["b"]) > 0

    # ------------------------------------------------------------------
    # mass matrices and projections
    # ------------------------------------------------------------------

    def weighted_mass(self, space: str, c=None) -> sp.csr_matrix:
        """Mass matrix of ``space`` with pointwise weight ``c`` (default 1)."""
        wc = self.W if c is None else self.W * c
        D = sp.diags(wc)
        if space == "u":
            Ex, Ez = self.E("u", "x"), self.E("u", "z")
            M = Ex.T @ D @ Ex + Ez.T @ D @ Ez
        else:
            Ev = self.E(space, "val")
            M = Ev.T @ D @ Ev
        return M.tocsc()

    @cached_property
    def mass(self):
        return {s: self.weighted_mass(s) for s in ("q", "u", "r", "t")}

    @cached_property
    def u_free(self) -> np.ndarray:
        return self.spaces["u"].free_dofs

    @cached_property
    def u_wall(self) -> np.ndarray:
        return self.spaces["u"].wall_dofs

    @cached_property
    def _mass_lu(self):
        fu = self.u_free
        return {
            "u": spla.splu(self.mass["u"][fu][:, fu].tocsc()),
            "r": spla.splu(self.mass["r"]),
            "t": spla.splu(self.mass["t"]),
            "q": spla.splu(self.mass["q"]),
        }

    def solve_mass(self, space: str, rhs: np.ndarray) -> np.ndarray:
        """Apply the inverse mass matrix; velocity solves act on free dofs."""
        if space == "u":
            out = np.zeros(self.spaces["u"].ndofs)
            out[self.u_free] = self._mass_lu["u"].solve(rhs[self.u_free])
            return out
        return self._mass_lu[space].solve(rhs)

    def project_scalar(self, space: str, values: np.ndarray) -> np.ndarray:
        """L2 projection of pointwise values at volume quadrature points."""
        return self.solve_mass(space, self.E(space, "val").T @ (self.W * values))

    def project_vector(self, vx: np.ndarray, vz: np.ndarray) -> np.ndarray:
        """L2 projection of a vector field into the wall-constrained velocity space."""
        rhs = self.E("u", "x").T @ (self.W * vx) + self.E("u", "z").T @ (self.W * vz)
        return self.solve_mass("u", rhs)

    def integrate(self, values: np.ndarray) -> float:
        return float(self.W @ values)

    # ------------------------------------------------------------------
    # convenience evaluators
    # ------------------------------------------------------------------

    def eval_u(self, coeffs: np.ndarray, derivs: bool = False) -> dict:
        keys = ("x", "z", "div") + (("x_dx", "x_dz", "z_dx", "z_dz") if derivs else ())
        return {k: self.E("u", k) @ coeffs for k in keys}

    def eval_scalar(self, space: str, coeffs: np.ndarray, derivs: bool = False) -> dict:
        keys = ("val", "dx", "dz") if derivs else ("val",)
        return {k: self.E(space, k) @ coeffs for k in keys}

    def space_of(self, name: str) -> FiniteElementSpace:
        return self.spaces[name]


def build_discretization(mesh: Mesh, k: int, model: str) -> Discretization:
    return Discretization(mesh, k, model)
