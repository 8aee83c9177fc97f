"""Sparse assembly and direct solvers.

Thin wrappers over :mod:`scipy.sparse` and SuperLU.  Assembly accumulates
``(row, col, value)`` triplets and sums duplicates on finalisation, which is
order independent up to floating point rounding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SparseMatrix = sp.csr_matrix


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a factorisation hits an exactly zero pivot."""


class SparseAssembler:
    """Accumulate triplets into a CSR matrix of fixed shape."""

    def __init__(self, nrows: int, ncols: int):
        self.shape = (int(nrows), int(ncols))
        self._rows, self._cols, self._vals = [], [], []

    def add(self, rows, cols, values):
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
        values = np.atleast_1d(np.asarray(values, dtype=np.float64))
        if rows.size and (rows.min() < 0 or rows.max() >= self.shape[0]):
            raise IndexError(f"row index out of bounds for shape {self.shape}")
        if cols.size and (cols.min() < 0 or cols.max() >= self.shape[1]):
            raise IndexError(f"column index out of bounds for shape {self.shape}")
        self._rows.append(rows.ravel())
        self._cols.append(cols.ravel())
        self._vals.append(np.broadcast_to(values, rows.shape).ravel())

    def add_local(self, dofs, local_matrix):
        """Scatter a dense element matrix indexed by ``dofs`` on both axes."""
        dofs = np.asarray(dofs)
        r, c = np.meshgrid(dofs, dofs, indexing="ij")
        self.add(r.ravel(), c.ravel(), np.asarray(local_matrix).ravel())

    def finalize(self) -> SparseMatrix:
        if self._rows:
            rows = np.concatenate(self._rows)
            cols = np.concatenate(self._cols)
            vals = np.concatenate(self._vals)
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        mat = sp.coo_matrix((vals, (rows, cols)), shape=self.shape).tocsr()
        mat.sum_duplicates()
        mat.sort_indices()
        return mat


def _check_square(A):
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got shape {A.shape}")


def factorize(A):
    """SuperLU factorisation with a descriptive error on singularity."""
    _check_square(A)
    try:
        return spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise SingularMatrixError(f"sparse LU failed: {exc}") from exc


def solve_direct(A, b) -> np.ndarray:
    """Solve ``A x = b`` by sparse LU with partial pivoting."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != A.shape[0]:
        raise ValueError("right-hand side length does not match matrix")
    x = factorize(A).solve(b)
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("non-finite solution; matrix is numerically singular")
    return x


@dataclass
class BlockSystem:
    """2x2 block system for the coupled velocity/density update.

    ``[[A_uu, A_ur], [A_ru, A_rr]] [du, dr] = [b_u, b_r]``
    """

    A_uu: sp.spmatrix
    A_ur: sp.spmatrix
    A_ru: sp.spmatrix
    A_rr: sp.spmatrix
    b_u: np.ndarray | None = None
    b_r: np.ndarray | None = None

    def __post_init__(self):
        nu, nr = self.A_uu.shape[0], self.A_rr.shape[0]
        shapes = {
            "A_uu": (self.A_uu.shape, (nu, nu)),
            "A_ur": (self.A_ur.shape, (nu, nr)),
            "A_ru": (self.A_ru.shape, (nr, nu)),
            "A_rr": (self.A_rr.shape, (nr, nr)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise ValueError(f"block {name} has shape {got}, expected {want}")
        self._lu = None
        self._A = None

    @property
    def sizes(self):
        return self.A_uu.shape[0], self.A_rr.shape[0]

    def matrix(self) -> sp.csc_matrix:
        return sp.bmat([[self.A_uu, self.A_ur], [self.A_ru, self.A_rr]], format="csc")

    def assembled(self) -> sp.csc_matrix:
        if self._A is None:
            self._A = self.matrix()
        return self._A

    def factor(self):
        if self._lu is None:
            self._lu = factorize(self.assembled())
        return self._lu

    def matvec(self, du, dr):
        return self.A_uu @ du + self.A_ur @ dr, self.A_ru @ du + self.A_rr @ dr


def solve_block(system: BlockSystem, tol: float = 1e-12, b_u=None, b_r=None):
    """Monolithic direct solve of a :class:`BlockSystem`.

    The factorisation is cached on the system, so repeated calls with new
    right-hand sides cost one forward/back substitution each.  Up to three
    steps of iterative refinement are applied while the relative residual
    exceeds ``tol``; a residual still above ``1e3 * tol`` is an error.
    """
    b_u = system.b_u if b_u is None else b_u
    b_r = system.b_r if b_r is None else b_r
    nu, nr = system.sizes
    b = np.concatenate([b_u, b_r])
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(nu), np.zeros(nr)
    lu = system.factor()
    x = lu.solve(b)
    A = system.assembled()
    r = b - A @ x
    for _ in range(3):
        if not np.linalg.norm(r) > tol * nb:
            break
        x += lu.solve(r)
        r = b - A @ x
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("block solve produced non-finite values")
    rel = np.linalg.norm(r) / nb
    if rel > 1e3 * tol:
        raise np.linalg.LinAlgError(f"block solve residual {rel:.3e} above tolerance {tol:.1e}")
    return x[:nu], x[nu:]
