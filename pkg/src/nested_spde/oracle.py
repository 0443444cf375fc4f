"""Closed-form spectral references on the unit square.

Laplacian eigenpairs::

    Dirichlet: prod_k sqrt(2) sin(n_k pi x_k),      lam = pi^2 (n1^2 + n2^2)
    Neumann:   prod_k sqrt(2) cos((n_k - 1) pi x_k), lam = pi^2 ((n1-1)^2 + (n2-1)^2)

(for Neumann the normalisation drops the sqrt(2) factor on a zero index.)
The noise operator is ``A2 = a2_shift * I - Laplace``, so ``mu = a2_shift + lam``.

For ``du = Laplace u dt + A2^{-gamma} dW`` with ``u(0) = 0`` the Ito isometry
gives, per mode,

    E <u(T), e>^2 = mu^{-2 gamma} int_0^T e^{-2 lam (T - s)} ds
                  = mu^{-2 gamma} (1 - e^{-2 lam T}) / (2 lam)

(``mu^{-2 gamma} T`` for ``lam = 0``).
"""
import math
from dataclasses import dataclass

import numpy as np

from .mesh import DIRICHLET, NEUMANN, check_bc


@dataclass(frozen=True)
class SpectralBasis:
    bc: str
    n1: np.ndarray
    n2: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    cutoff: int
    a2_shift: float = 1.0

    def __len__(self):
        return len(self.lam)

    @property
    def modes(self):
        return list(zip(self.n1.tolist(), self.n2.tolist(), self.lam.tolist(), self.mu.tolist()))

    def eigenfunction(self, j, points):
        """L2-normalised eigenfunction of mode ``j`` evaluated at ``points``."""
        x, y = points[:, 0], points[:, 1]
        n1, n2 = int(self.n1[j]), int(self.n2[j])
        if self.bc == DIRICHLET:
            return 2.0 * np.sin(n1 * np.pi * x) * np.sin(n2 * np.pi * y)
        fx = np.cos((n1 - 1) * np.pi * x) * (math.sqrt(2.0) if n1 > 1 else 1.0)
        fy = np.cos((n2 - 1) * np.pi * y) * (math.sqrt(2.0) if n2 > 1 else 1.0)
        return fx * fy


def eigenpairs_unit_square(bc, cutoff, a2_shift=1.0):
    """All modes with ``1 <= n1, n2 <= cutoff``, sorted by ``lam`` then ``(n1, n2)``."""
    bc = check_bc(bc)
    if cutoff < 1:
        raise ValueError("cutoff must be at least 1")
    n1, n2 = np.meshgrid(np.arange(1, cutoff + 1), np.arange(1, cutoff + 1), indexing="ij")
    n1, n2 = n1.ravel(), n2.ravel()
    off = 0 if bc == DIRICHLET else 1
    lam = np.pi ** 2 * ((n1 - off) ** 2 + (n2 - off) ** 2).astype(np.float64)
    order = np.lexsort((n2, n1, lam))
    n1, n2, lam = n1[order], n2[order], lam[order]
    return SpectralBasis(bc, n1, n2, lam, a2_shift + lam, int(cutoff), float(a2_shift))


def mode_variances(T, gamma, basis):
    lam, mu = basis.lam, basis.mu
    safe = np.where(lam > 0, lam, 1.0)
    return mu ** (-2.0 * gamma) * np.where(lam > 0, -np.expm1(-2.0 * lam * T) / (2.0 * safe), T)


def expected_squared_norm(T, gamma, basis):
    """Truncated ``E ||u(T)||^2`` summed over the modes of ``basis``."""
    if not T > 0:
        raise ValueError("T must be positive")
    v = mode_variances(T, gamma, basis)
    # smallest terms first for a reproducible, accurate sum
    return float(np.sum(np.sort(v)))


def tail_bound(gamma, basis):
    """Upper bound for the modes left out by ``basis`` (any ``T``).

    Uses ``v <= lam^{-1 - 2 gamma} / 2`` (valid for ``a2_shift >= 0``) and
    compares the lattice sum beyond the cutoff with an integral.
    """
    if basis.a2_shift < 0:
        raise ValueError("tail bound needs a nonnegative shift")
    p = 2.0 + 4.0 * gamma
    A = 0.5 * np.pi ** (-p)
    c = basis.cutoff + (1 if basis.bc == DIRICHLET else 0)
    r = c - math.sqrt(2.0)
    if r <= 0:
        return math.inf
    # quarter plane: (pi/2) int_r^inf rho * A rho^-p
    bound = 0.5 * np.pi * A * r ** (2.0 - p) / (p - 2.0)
    if basis.bc == NEUMANN:
        # lattice points on the two axes: 2 sum_{m >= c} A m^-p
        bound += 2.0 * A * (c - 1.0) ** (1.0 - p) / (p - 1.0) if c > 1 else math.inf
    return float(bound)


def oracle_value(T, gamma, bc=NEUMANN, cutoff=200, a2_shift=1.0):
    """``(truncated sum, tail bound)`` for the reference mean-square norm."""
    basis = eigenpairs_unit_square(bc, cutoff, a2_shift)
    return expected_squared_norm(T, gamma, basis), tail_bound(gamma, basis)
