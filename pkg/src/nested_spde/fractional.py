"""Sinc quadrature for negative fractional powers of a discrete elliptic operator.

For ``0 < gamma < 1`` and resolution ``k``::

    A^{-gamma} ~= (k sin(pi gamma) / pi) * sum_{j=-M}^{N} e^{(1-gamma) y_j} (e^{y_j} + A)^{-1}

with ``y_j = j k``, ``N = ceil(pi^2 / (2 gamma k^2))`` and
``M = ceil(pi^2 / (2 (1 - gamma) k^2))``.  On a finite element space with
mass matrix ``M_h`` and operator matrix ``K_h`` each resolvent becomes the
shifted solve ``(e^{y_j} M_h + K_h)^{-1}`` applied to a load vector.
``gamma = 1`` is the plain inverse ``K_h^{-1}``.
"""
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import sparse
from .errors import UnsupportedError

DENSE_LIMIT = 2000
# e^y must stay finite in double precision
_MAX_NODE = 700.0
# cached shifted factors are dropped beyond this many stored entries (~800 MB)
FACTOR_BUDGET = 100_000_000


@dataclass(frozen=True)
class SincQuadrature:
    gamma: float
    k: float
    N: int
    M: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def is_inverse(self):
        return self.gamma == 1.0

    @property
    def shifts(self):
        return np.exp(self.nodes)

    def __len__(self):
        return len(self.nodes)

    def scalar(self, lam):
        """The rational function the quadrature applies to an eigenvalue ``lam``."""
        lam = np.asarray(lam, dtype=np.float64)
        if self.is_inverse:
            return 1.0 / lam
        return np.sum(self.weights / (self.shifts + lam[..., None]), axis=-1)


def quadrature_nodes(gamma, k):
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if not k > 0.0:
        raise ValueError(f"quadrature resolution must be positive, got {k}")
    if gamma == 1.0:
        empty = np.empty(0)
        return SincQuadrature(1.0, float(k), 0, 0, empty, empty)
    N = math.ceil(math.pi ** 2 / (2.0 * gamma * k ** 2))
    M = math.ceil(math.pi ** 2 / (2.0 * (1.0 - gamma) * k ** 2))
    if N * k > _MAX_NODE:
        raise ValueError(f"largest node e^{N * k:.0f} overflows; increase k or gamma")
    y = np.arange(-M, N + 1) * k
    w = (k * math.sin(math.pi * gamma) / math.pi) * np.exp((1.0 - gamma) * y)
    return SincQuadrature(float(gamma), float(k), N, M, y, w)


def default_resolution(gamma, h, c0=1.0):
    """``k = 1 / max(1, ceil((2 gamma + 1) ln(1/h) / c0))``."""
    if h <= 0 or c0 <= 0:
        raise ValueError("h and c0 must be positive")
    return 1.0 / max(1, math.ceil((2.0 * gamma + 1.0) * math.log(1.0 / h) / c0))


class FractionalOperator:
    """``Q_k^{-gamma}(A_h)`` mapping load vectors to nodal coefficients.

    Shifted factors are computed once and kept unless their total size
    exceeds ``budget`` entries, in which case each application refactors.
    """

    def __init__(self, M, K, quad, symmetric=None, budget=FACTOR_BUDGET):
        self.M = sparse.as_csr(M)
        self.K = sparse.as_csr(K)
        if self.M.shape != self.K.shape:
            raise ValueError(f"shape mismatch: M {self.M.shape}, K {self.K.shape}")
        self.quad = quad
        self.symmetric = sparse.is_symmetric(self.K) if symmetric is None else symmetric
        self.factors = []
        if quad.is_inverse:
            self.factors = [sparse.factorize(self.K, self.symmetric)]
            return
        stored = 0
        for shift in quad.shifts:
            f = self._factor(shift)
            stored += getattr(f, "nnz", self.K.nnz * 10)
            if stored > budget:
                self.factors = None
                break
            self.factors.append(f)

    def _factor(self, shift):
        return sparse.factorize(shift * self.M + self.K, self.symmetric)

    @property
    def n(self):
        return self.M.shape[0]

    def __call__(self, b):
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise ValueError(f"load vector has {b.shape[0]} rows, operator has {self.n}")
        if self.quad.is_inverse:
            return self.factors[0].solve(b)
        out = np.zeros_like(b)
        # summed in fixed node order
        for j, (shift, w) in enumerate(zip(self.quad.shifts, self.quad.weights)):
            f = self.factors[j] if self.factors is not None else self._factor(shift)
            out += w * f.solve(b)
        return out


def apply_fractional_inverse(M, K, quad, b, tol=sparse.DEFAULT_TOL):
    """One-shot ``Q_k^{-gamma}(A_h)`` applied to the load vector ``b``."""
    M = sparse.as_csr(M)
    K = sparse.as_csr(K)
    b = np.asarray(b, dtype=np.float64)
    if M.shape != K.shape or b.shape[0] != M.shape[0]:
        raise ValueError("shape mismatch between M, K and b")
    if quad.is_inverse:
        if sparse.is_symmetric(K):
            return sparse.solve_spd(K, b, tol)
        return sparse.solve_general(K, b, tol)
    out = np.zeros_like(b)
    for shift, w in zip(quad.shifts, quad.weights):
        out += w * sparse.solve_shifted(M, K, shift, b, tol)
    return out


def generalized_eigh(M, K):
    """Eigenpairs of ``K V = M V diag(lam)`` normalised so that ``V^T M V = I``."""
    n = M.shape[0]
    if n > DENSE_LIMIT:
        raise UnsupportedError(f"dense eigendecomposition limited to {DENSE_LIMIT} dofs, got {n}")
    if not sparse.is_symmetric(K):
        raise UnsupportedError("dense oracle needs a symmetric operator (no advection)")
    Kd = K.toarray() if hasattr(K, "toarray") else np.asarray(K)
    Md = M.toarray() if hasattr(M, "toarray") else np.asarray(M)
    Kd = 0.5 * (Kd + Kd.T)
    return sla.eigh(Kd, 0.5 * (Md + Md.T))


def fractional_dense_oracle(M, K, gamma, b):
    """Exact ``A_h^{-gamma}`` on a load vector via the generalized eigenbasis."""
    lam, V = generalized_eigh(M, K)
    b = np.asarray(b, dtype=np.float64)
    scale = lam ** (-gamma)
    if b.ndim == 1:
        return V @ (scale * (V.T @ b))
    return V @ (scale[:, None] * (V.T @ b))
