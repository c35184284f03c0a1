"""Compressed-row sparse matrices and preconditioned conjugate gradients."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from glocal.exceptions import DefinitenessError, GlocalError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Finalized CSR matrix: sorted column indices, no stored zeros."""

    n: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    symmetric_flag: bool = False

    @classmethod
    def from_triplets(cls, n, rows, cols=None, vals=None, symmetric=False):
        """Sum duplicate ``(row, col, value)`` entries into a CSR matrix.

        Either pass three parallel arrays or a single sequence of triples.
        Duplicates are summed in input order, so the result is deterministic.
        """
        if cols is None:
            entries = list(rows)
            rows = np.array([e[0] for e in entries], dtype=np.int64)
            cols = np.array([e[1] for e in entries], dtype=np.int64)
            vals = np.array([e[2] for e in entries], dtype=float)
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        if len(rows) and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n):
            raise IndexError(f"triplet index out of range for dimension {n}")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows):
            start = np.ones(len(rows), dtype=bool)
            start[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            idx = np.flatnonzero(start)
            vals = np.add.reduceat(vals, idx)
            rows, cols = rows[idx], cols[idx]
            keep = vals != 0.0
            rows, cols, vals = rows[keep], cols[keep], vals[keep]
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=offsets[1:])
        return cls(n, offsets, cols, vals, symmetric)

    @cached_property
    def _csr(self):
        return sp.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=(self.n, self.n))

    @property
    def nnz(self):
        return len(self.values)

    def matvec(self, x):
        return self._csr @ np.asarray(x, dtype=float)

    __matmul__ = matvec

    def diagonal(self):
        return self._csr.diagonal()

    def row_sums(self):
        return np.asarray(self._csr.sum(axis=1)).ravel()

    def to_dense(self):
        return self._csr.toarray()

    def triplets(self):
        rows = np.repeat(np.arange(self.n), np.diff(self.row_offsets))
        return rows, self.col_indices, self.values

    def is_structurally_symmetric(self):
        pattern = self._csr.copy()
        pattern.data[:] = 1.0
        return (pattern != pattern.T).nnz == 0

    def max_asymmetry(self):
        d = self._csr - self._csr.T
        return float(abs(d).max()) if d.nnz else 0.0

    def scaled(self, alpha):
        return SparseMatrix(self.n, self.row_offsets, self.col_indices, alpha * self.values, self.symmetric_flag)

    def add(self, other, alpha=1.0):
        """Return ``self + alpha * other``."""
        r1, c1, v1 = self.triplets()
        r2, c2, v2 = other.triplets()
        return SparseMatrix.from_triplets(
            self.n,
            np.concatenate([r1, r2]),
            np.concatenate([c1, c2]),
            np.concatenate([v1, alpha * v2]),
            symmetric=self.symmetric_flag and other.symmetric_flag,
        )

    def eliminate(self, dofs):
        """Zero the rows and columns of ``dofs`` and put 1 on their diagonal."""
        fixed = np.zeros(self.n, dtype=bool)
        fixed[np.asarray(dofs, dtype=np.int64)] = True
        r, c, v = self.triplets()
        keep = ~(fixed[r] | fixed[c])
        d = np.flatnonzero(fixed)
        return SparseMatrix.from_triplets(
            self.n,
            np.concatenate([r[keep], d]),
            np.concatenate([c[keep], d]),
            np.concatenate([v[keep], np.ones(len(d))]),
            symmetric=self.symmetric_flag,
        )


def eliminated_rhs(A, b, dofs, values):
    """Right-hand side matching :meth:`SparseMatrix.eliminate` for ``u[dofs] = values``."""
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    out = np.array(b, dtype=float)
    if np.any(values != 0):
        g = np.zeros(A.n)
        g[dofs] = values
        out -= A.matvec(g)
    out[dofs] = values
    return out


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float
    converged: bool


class Jacobi:
    """Diagonal preconditioner; build once and reuse across solves."""

    def __init__(self, A):
        d = A.diagonal()
        if np.any(d <= 0):
            raise DefinitenessError("non-positive diagonal entry in Jacobi preconditioner", 0)
        self.inv = 1.0 / d

    def __call__(self, r):
        return self.inv * r


class Factorized:
    """Sparse LU factors of ``A`` applied as a preconditioner.

    CG then converges in one or two iterations; meant for large reference
    solves where Jacobi needs thousands of iterations per system.
    """

    def __init__(self, A):
        self.lu = spla.splu(A._csr.tocsc(), permc_spec="COLAMD")

    def __call__(self, r):
        return self.lu.solve(r)


PRECONDITIONERS = {"jacobi": Jacobi, "factorized": Factorized}


def make_preconditioner(kind, A):
    """``None``, a name from :data:`PRECONDITIONERS`, or a ready callable."""
    if kind is None or callable(kind):
        return kind
    try:
        return PRECONDITIONERS[kind](A)
    except KeyError:
        raise GlocalError(f"unknown preconditioner {kind!r}") from None


def cg_solve(A, b, tol=1e-10, maxit=None, precond="jacobi", x0=None, callback=None):
    """Preconditioned conjugate gradients for SPD ``A``.

    Parameters
    ----------
    A : SparseMatrix
    b : array
    tol : float
        Target relative residual ``||b - A x|| / ||b||``.
    maxit : int, optional
        Defaults to ``10 * n``.
    precond : {None, "jacobi", "factorized"} or callable
        A prebuilt preconditioner may be passed to avoid rebuilding it.
    x0 : array, optional
        Initial guess.
    callback : callable, optional
        Called with the iterate after every iteration.

    Returns
    -------
    x, SolveReport
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    maxit = 10 * n if maxit is None else maxit
    M = make_preconditioner(precond, A)
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)
    r = b - A.matvec(x)
    res = np.linalg.norm(r) / bnorm
    if res <= tol:
        return x, SolveReport(0, res, True)
    z = M(r) if M else r
    p = z.copy()
    rz = r @ z
    it = 0
    while it < maxit:
        it += 1
        Ap = A.matvec(p)
        pAp = p @ Ap
        if pAp <= 0:
            raise DefinitenessError(f"CG breakdown at iteration {it}: p^T A p = {pAp:.3e}", it)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if callback is not None:
            callback(x)
        if np.linalg.norm(r) <= tol * bnorm:
            # Guard against drift of the recursive residual.
            r = b - A.matvec(x)
            res = np.linalg.norm(r) / bnorm
            if res <= tol:
                return x, SolveReport(it, res, True)
        z = M(r) if M else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(b - A.matvec(x)) / bnorm
    logger.warning("CG did not converge in %d iterations (residual %.3e)", maxit, res)
    return x, SolveReport(it, res, res <= tol)
