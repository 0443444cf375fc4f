"""Sparse linear algebra used by every implicit solve in the package.

Matrices are plain ``scipy.sparse`` CSR matrices.  Symmetric positive
definite systems are factored with a profile (envelope) Cholesky after a
reverse Cuthill-McKee reordering; the factor is stored row by row, each row
holding the contiguous stretch from its first nonzero to the diagonal.
Two kernels compute and apply it: numba loops, or LAPACK banded routines
on the same envelope (``NESTED_SPDE_DISABLE_NUMBA=1``).
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import reverse_cuthill_mckee

from . import _accel
from .errors import ConvergenceError, FactorizationError, SolverError

DEFAULT_TOL = 1e-10
DIRECT_LIMIT = 200_000
_MAX_REFINE = 3
_RHS_BLOCK = 64


def as_csr(A):
    A = sp.csr_matrix(A, dtype=np.float64)
    A.sum_duplicates()
    A.sort_indices()
    return A


def is_symmetric(A, rtol=1e-12):
    A = sp.csr_matrix(A)
    if A.shape[0] != A.shape[1]:
        return False
    scale = abs(A).max() if A.nnz else 0.0
    if scale == 0.0:
        return True
    diff = A - A.T
    return (abs(diff).max() if diff.nnz else 0.0) <= rtol * scale


def relative_residual(A, x, b):
    """Column-wise ``||Ax - b|| / ||b||`` (absolute where ``b`` vanishes)."""
    r = A @ x - b
    rn = np.linalg.norm(r, axis=0)
    bn = np.linalg.norm(b, axis=0)
    return np.where(bn > 0, rn / np.where(bn > 0, bn, 1.0), rn)


# --------------------------------------------------------------------------
# kernels

@_accel.njit
def _envelope_cholesky_nb(first, rowptr, vals):
    n = first.shape[0]
    for i in range(n):
        fi = first[i]
        base_i = rowptr[i] - fi
        for j in range(fi, i):
            fj = first[j]
            base_j = rowptr[j] - fj
            k0 = fi if fi > fj else fj
            s = vals[base_i + j]
            for k in range(k0, j):
                s -= vals[base_i + k] * vals[base_j + k]
            vals[base_i + j] = s / vals[base_j + j]
        d = vals[base_i + i]
        for k in range(fi, i):
            d -= vals[base_i + k] * vals[base_i + k]
        if not d > 0.0:
            return i
        vals[base_i + i] = np.sqrt(d)
    return -1


@_accel.njit(error_model="numpy")
def _envelope_solve_nb(first, rowptr, vals, X, block):
    # X <- (L L^T)^{-1} X, processed in column blocks that stay cache resident
    n, m = X.shape
    tmp = np.empty(block)
    for c0 in range(0, m, block):
        c1 = min(c0 + block, m)
        w = c1 - c0
        for i in range(n):
            base = rowptr[i] - first[i]
            for c in range(w):
                tmp[c] = X[i, c0 + c]
            for k in range(first[i], i):
                lik = vals[base + k]
                xk = X[k, c0:c1]
                for c in range(w):
                    tmp[c] -= lik * xk[c]
            d = 1.0 / vals[base + i]
            for c in range(w):
                X[i, c0 + c] = tmp[c] * d
        for i in range(n - 1, -1, -1):
            base = rowptr[i] - first[i]
            d = 1.0 / vals[base + i]
            for c in range(w):
                tmp[c] = X[i, c0 + c] * d
                X[i, c0 + c] = tmp[c]
            for k in range(first[i], i):
                lik = vals[base + k]
                xk = X[k, c0:c1]
                for c in range(w):
                    xk[c] -= lik * tmp[c]


@_accel.njit(error_model="numpy")
def _envelope_lmul_nb(first, rowptr, vals, Z, block):
    n, m = Z.shape
    Y = np.zeros((n, m))
    for c0 in range(0, m, block):
        c1 = min(c0 + block, m)
        w = c1 - c0
        for i in range(n):
            base = rowptr[i] - first[i]
            yi = Y[i, c0:c1]
            for k in range(first[i], i + 1):
                lik = vals[base + k]
                zk = Z[k, c0:c1]
                for c in range(w):
                    yi[c] += lik * zk[c]
    return Y


def _envelope_to_band(first, rowptr, vals):
    n = len(first)
    lengths = np.arange(n) - first + 1
    bw = int(lengths.max()) - 1
    rows = np.repeat(np.arange(n), lengths)
    cols = np.arange(len(vals)) - np.repeat(rowptr[:-1], lengths) + np.repeat(first, lengths)
    ab = np.zeros((bw + 1, n))
    ab[rows - cols, cols] = vals
    return ab, rows, cols


def _envelope_cholesky_np(first, rowptr, vals):
    ab, rows, cols = _envelope_to_band(first, rowptr, vals)
    try:
        cb = sla.cholesky_banded(ab, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        # LAPACK reports the failing leading minor (1-based) in the message
        digits = "".join(ch for ch in str(exc).split("minor")[0] if ch.isdigit())
        return int(digits) - 1 if digits else 0
    vals[:] = cb[rows - cols, cols]
    return -1


# --------------------------------------------------------------------------
# factors

@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    """``P A P^T = L L^T`` with ``(P A P^T)[i, j] = A[perm[i], perm[j]]``.

    Row ``i`` of ``L`` is stored densely over columns ``first[i]..i`` in
    ``values[rowptr[i]:rowptr[i+1]]``.
    """
    perm: np.ndarray
    first: np.ndarray
    rowptr: np.ndarray
    values: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        return len(self.perm)

    @property
    def nnz(self):
        return len(self.values)

    @property
    def L(self):
        if "L" not in self._cache:
            lengths = np.diff(self.rowptr)
            rows = np.repeat(np.arange(self.n), lengths)
            cols = (np.arange(self.nnz) - np.repeat(self.rowptr[:-1], lengths)
                    + np.repeat(self.first, lengths))
            L = sp.csr_matrix((self.values.copy(), cols, self.rowptr.copy()), shape=(self.n, self.n))
            L.eliminate_zeros()
            self._cache["L"] = L
        return self._cache["L"]

    @property
    def _band(self):
        if "band" not in self._cache:
            self._cache["band"] = _envelope_to_band(self.first, self.rowptr, self.values)[0]
        return self._cache["band"]

    def solve(self, b):
        """Solve ``A x = b`` for a vector or an ``(n, m)`` block of columns."""
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise ValueError(f"right-hand side has {b.shape[0]} rows, factor has {self.n}")
        X = np.array(b[self.perm].reshape(self.n, -1), order="C")
        if _accel.backend() == "numba":
            _envelope_solve_nb(self.first, self.rowptr, self.values, X, _RHS_BLOCK)
        else:
            X = sla.cho_solve_banded((self._band, True), X, check_finite=False)
        x = np.empty_like(X)
        x[self.perm] = X
        return x.reshape(b.shape)

    def apply_sqrt(self, z):
        """``P^T L z``; maps standard normals to a sample with covariance ``A``."""
        z = np.asarray(z, dtype=np.float64)
        if _accel.backend() == "numba":
            Z = np.ascontiguousarray(z.reshape(self.n, -1))
            y = _envelope_lmul_nb(self.first, self.rowptr, self.values, Z, _RHS_BLOCK)
            y = y.reshape(z.shape)
        else:
            y = self.L @ z
        x = np.empty_like(y)
        x[self.perm] = y
        return x

    def reconstruct(self):
        """``P^T L L^T P`` as a sparse matrix (multiply-back check)."""
        L = self.L
        LLt = (L @ L.T).tocoo()
        return sp.csr_matrix((LLt.data, (self.perm[LLt.row], self.perm[LLt.col])),
                             shape=(self.n, self.n))


def _envelope_size(A):
    lower = sp.tril(A, format="csr")
    rows = np.repeat(np.arange(A.shape[0]), np.diff(lower.indptr))
    first = np.full(A.shape[0], A.shape[0])
    np.minimum.at(first, rows, lower.indices)
    return int(np.sum(np.arange(A.shape[0]) - np.minimum(first, np.arange(A.shape[0]))))


def _ordering(A):
    """Reverse Cuthill-McKee, or ``None`` (natural order) if it does not shrink the envelope."""
    perm = reverse_cuthill_mckee(A, symmetric_mode=True).astype(np.int64)
    if _envelope_size(as_csr(A[perm][:, perm])) < _envelope_size(A):
        return perm
    return None


def cholesky(A):
    """Profile Cholesky of a symmetric positive definite sparse matrix.

    Raises
    ------
    FactorizationError
        When a non-positive pivot shows the matrix is not SPD.
    """
    A = as_csr(A)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if n == 0:
        raise ValueError("empty matrix")
    perm = _ordering(A)
    Ap = as_csr(A[perm][:, perm]) if perm is not None else A
    perm = np.arange(n, dtype=np.int64) if perm is None else perm
    lower = sp.tril(Ap, format="csr")
    lower.sort_indices()
    counts = np.diff(lower.indptr)
    if np.any(counts == 0) or np.any(lower.indices[lower.indptr[1:] - 1] != np.arange(n)):
        raise FactorizationError("matrix has a zero diagonal entry")
    first = lower.indices[lower.indptr[:-1]].astype(np.int64)
    lengths = np.arange(n) - first + 1
    rowptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lengths, out=rowptr[1:])
    vals = np.zeros(rowptr[-1])
    rows = np.repeat(np.arange(n), counts)
    vals[rowptr[rows] + lower.indices - first[rows]] = lower.data

    if _accel.backend() == "numba":
        bad = _envelope_cholesky_nb(first, rowptr, vals)
    else:
        bad = _envelope_cholesky_np(first, rowptr, vals)
    if bad >= 0:
        raise FactorizationError(
            f"non-positive pivot at permuted row {bad}: matrix is not positive definite")
    for arr in (perm, first, rowptr, vals):
        arr.setflags(write=False)
    return CholeskyFactor(perm, first, rowptr, vals)


class LUFactor:
    """Sparse LU (SuperLU) for non-symmetric systems."""

    def __init__(self, A):
        A = as_csr(A)
        try:
            self._lu = spla.splu(A.tocsc())
        except RuntimeError as exc:
            raise FactorizationError(f"sparse LU failed: {exc}") from exc
        self.n = A.shape[0]

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        return self._lu.solve(b)


def factorize(A, symmetric=None):
    """Cholesky for symmetric matrices, LU otherwise."""
    if symmetric is None:
        symmetric = is_symmetric(A)
    return cholesky(A) if symmetric else LUFactor(A)


def mass_sqrt(M):
    """A square root of the mass matrix, as a permuted Cholesky factor."""
    return cholesky(M)


# --------------------------------------------------------------------------
# solves with residual control

def _refined(A, factor, b, tol):
    x = factor.solve(b)
    for _ in range(_MAX_REFINE):
        res = relative_residual(A, x, b)
        if np.all(res <= tol):
            return x
        x = x + factor.solve(b - A @ x)
    if np.all(relative_residual(A, x, b) <= tol):
        return x
    raise ConvergenceError(
        f"direct solve missed tolerance {tol:g}: residual {relative_residual(A, x, b).max():.3g}")


def _krylov(method, A, b, tol, maxiter):
    cols = b.reshape(b.shape[0], -1)
    out = np.empty_like(cols)
    for c in range(cols.shape[1]):
        x, info = method(A, cols[:, c], rtol=tol, atol=0.0, maxiter=maxiter)
        if info != 0:
            raise ConvergenceError(f"{method.__name__} did not converge (info={info})")
        out[:, c] = x
    return out.reshape(b.shape)


def solve_spd(A, b, tol=DEFAULT_TOL, maxiter=None):
    """Solve an SPD system to relative residual ``tol``.

    Direct profile Cholesky below ``DIRECT_LIMIT`` unknowns, conjugate
    gradients above.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = as_csr(A)
    b = np.asarray(b, dtype=np.float64)
    if A.shape[0] <= DIRECT_LIMIT:
        return _refined(A, cholesky(A), b, tol)
    return _krylov(spla.cg, A, b, tol, maxiter or 10 * A.shape[0])


def solve_general(A, b, tol=DEFAULT_TOL, maxiter=None):
    """Solve a square nonsingular system (sparse LU, BiCGStab above the limit)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = as_csr(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    b = np.asarray(b, dtype=np.float64)
    if A.shape[0] <= DIRECT_LIMIT:
        return _refined(A, LUFactor(A), b, tol)
    return _krylov(spla.bicgstab, A, b, tol, maxiter or 10 * A.shape[0])


def solve_shifted(M, K, shift, b, tol=DEFAULT_TOL):
    """Solve ``(shift * M + K) x = b`` for ``shift >= 0``."""
    if shift < 0:
        raise ValueError("shift must be nonnegative")
    A = as_csr(shift * as_csr(M) + as_csr(K))
    if is_symmetric(A):
        return solve_spd(A, b, tol)
    return solve_general(A, b, tol)


__all__ = [
    "CholeskyFactor", "LUFactor", "SolverError", "cholesky", "factorize", "is_symmetric",
    "mass_sqrt", "relative_residual", "solve_general", "solve_shifted", "solve_spd",
]
