"""P1 finite element matrices on a structured triangulation.

For a bilinear form

    a(u, v) = int A grad u . grad v + (w . grad u) v + alpha u v dx

the coefficients are frozen at each triangle's barycentre, the basis
products are then integrated exactly.  With constant coefficients the
result is the exact Galerkin matrix.
"""
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from . import _accel
from .errors import AssemblyError
from .mesh import check_bc

_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0

Coefficient = Union[float, np.ndarray, Callable[[np.ndarray], np.ndarray]]


def _evaluate(value, points, shape):
    n = len(points)
    if callable(value):
        out = np.asarray(value(points), dtype=np.float64)
    else:
        out = np.asarray(value, dtype=np.float64)
    if shape == (2, 2) and out.shape in ((), (n,)):
        # scalar diffusivity -> multiple of the identity
        out = out.reshape(-1, 1, 1) * np.eye(2)
    return np.broadcast_to(out, (n,) + shape).astype(np.float64, copy=False)


@dataclass(frozen=True)
class CoefficientField:
    """Coefficients ``(A, w, alpha)`` of one second-order operator.

    Each entry is a constant or a vectorised callable taking an ``(n, 2)``
    array of points.  ``diffusion`` may be a scalar (isotropic) or a 2x2
    matrix; ``advection`` a 2-vector; ``reaction`` a scalar.
    ``coercive`` records the user's claim that the form is coercive on V.
    """
    diffusion: Coefficient = 1.0
    advection: Coefficient = 0.0
    reaction: Coefficient = 0.0
    coercive: bool = False

    def evaluate(self, points):
        A = _evaluate(self.diffusion, points, (2, 2))
        w = _evaluate(self.advection, points, (2,))
        alpha = _evaluate(self.reaction, points, ())
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(w)) and np.all(np.isfinite(alpha))):
            raise AssemblyError("coefficient evaluation produced non-finite values")
        return A, w, alpha

    @property
    def has_advection(self):
        return callable(self.advection) or np.any(np.asarray(self.advection) != 0)


def laplacian(reaction=0.0):
    """``reaction*I - Laplace`` with unit diffusion."""
    return CoefficientField(1.0, 0.0, reaction, coercive=reaction > 0)


# --------------------------------------------------------------------------
# element kernels: (ntri, 3, 3) local matrices, entry [t, i, j] = a(phi_j, phi_i)

def _geometry(mesh):
    p = mesh.vertices[mesh.triangles]
    area = mesh.areas()
    if np.any(area <= 0):
        bad = int(np.flatnonzero(area <= 0)[0])
        raise AssemblyError(f"triangle {bad} is degenerate or inverted (area {area[bad]:g})")
    return np.ascontiguousarray(p), area


def _element_matrices_np(p, area, A, w, alpha):
    # gradients of barycentric coordinates: grad phi_i = J^{-T} grad_ref phi_i
    x, y = p[:, :, 0], p[:, :, 1]
    grads = np.stack([
        np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1),
        np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1),
    ], axis=2) / (2.0 * area)[:, None, None]
    diff = np.einsum("tik,tkl,tjl->tij", grads, A, grads)
    adv = np.einsum("tk,tjk->tj", w, grads)[:, None, :] / 3.0
    local = diff + adv + alpha[:, None, None] * _MASS_REF
    return local * area[:, None, None]


@_accel.njit
def _element_matrices_nb(p, area, A, w, alpha):
    nt = p.shape[0]
    out = np.empty((nt, 3, 3))
    g = np.empty((3, 2))
    for t in range(nt):
        inv2a = 1.0 / (2.0 * area[t])
        for i in range(3):
            i1 = (i + 1) % 3
            i2 = (i + 2) % 3
            g[i, 0] = (p[t, i1, 1] - p[t, i2, 1]) * inv2a
            g[i, 1] = (p[t, i2, 0] - p[t, i1, 0]) * inv2a
        for i in range(3):
            for j in range(3):
                ag0 = A[t, 0, 0] * g[j, 0] + A[t, 0, 1] * g[j, 1]
                ag1 = A[t, 1, 0] * g[j, 0] + A[t, 1, 1] * g[j, 1]
                val = g[i, 0] * ag0 + g[i, 1] * ag1
                val += (w[t, 0] * g[j, 0] + w[t, 1] * g[j, 1]) / 3.0
                val += alpha[t] * (2.0 if i == j else 1.0) / 12.0
                out[t, i, j] = val * area[t]
    return out


def element_matrices(mesh, coeffs):
    """Local matrices of ``coeffs`` on every triangle, shape ``(ntri, 3, 3)``."""
    p, area = _geometry(mesh)
    centroids = p.mean(axis=1)
    A, w, alpha = coeffs.evaluate(centroids)
    A, w, alpha = (np.ascontiguousarray(a) for a in (A, w, alpha))
    if _accel.backend() == "numba":
        return _element_matrices_nb(p, area, A, w, alpha)
    return _element_matrices_np(p, area, A, w, alpha)


def element_mass(area):
    return area[:, None, None] * _MASS_REF


def _scatter(mesh, local, bc):
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_vertices
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    if check_bc(bc) == "dirichlet":
        free = mesh.free_dofs(bc)
        mat = mat[free][:, free].tocsr()
        mat.sort_indices()
    return mat


def assemble_mass(mesh, bc="neumann"):
    """Consistent P1 mass matrix ``M[i, j] = int phi_j phi_i``."""
    _, area = _geometry(mesh)
    return _scatter(mesh, element_mass(area), bc)


def assemble_form(mesh, coeffs, bc="neumann"):
    """Matrix ``K[i, j] = a(phi_j, phi_i)``, boundary dofs eliminated for Dirichlet."""
    return _scatter(mesh, element_matrices(mesh, coeffs), bc)


def coercivity_probe(K, M, n_probe=16, seed=0):
    """Smallest observed ``u^T K u / u^T M u`` over random vectors."""
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((K.shape[0], n_probe))
    return float(np.min(np.einsum("ij,ij->j", U, K @ U) / np.einsum("ij,ij->j", U, M @ U)))
