"""Nested structured triangulations of axis-aligned rectangles.

Level ``l`` of the family splits the rectangle into ``(2**l * n0)**2`` cells,
each cut into two triangles along the diagonal from its lower-left to its
upper-right corner.  Vertices are numbered lexicographically in ``(y, x)``::

    index = j * (n + 1) + i,   x = i * width / n,   y = j * height / n

so refinement and prolongation are reproducible bit for bit.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import MeshError

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


def check_bc(bc):
    bc = str(bc).lower()
    if bc not in (DIRICHLET, NEUMANN):
        raise ValueError(f"boundary condition must be 'dirichlet' or 'neumann', got {bc!r}")
    return bc


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_vertices: np.ndarray
    level: int
    h: float
    width: float = 1.0
    height: float = 1.0
    n0: int = 1
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_per_side(self):
        return self.n0 * 2 ** self.level

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def free_dofs(self, bc):
        """Indices of the unknowns kept after boundary elimination."""
        key = ("free", check_bc(bc))
        if key not in self._cache:
            mask = np.ones(self.n_vertices, dtype=bool)
            mask[boundary_dofs(self, bc)] = False
            free = np.flatnonzero(mask)
            free.setflags(write=False)
            self._cache[key] = free
        return self._cache[key]

    def areas(self):
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def diameters(self):
        p = self.vertices[self.triangles]
        edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return np.sqrt((edges ** 2).sum(axis=2)).max(axis=1)

    def same_family(self, other):
        return (self.width, self.height, self.n0) == (other.width, other.height, other.n0)


def build_rectangle(level, width=1.0, height=1.0, n0=1):
    """Level-``level`` member of the criss-cross family on ``[0,width]x[0,height]``."""
    if int(level) != level or level < 0:
        raise MeshError(f"level must be a nonnegative integer, got {level!r}")
    if n0 < 1 or width <= 0 or height <= 0:
        raise MeshError("n0, width and height must be positive")
    level = int(level)
    n = n0 * 2 ** level
    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1))  # jj varies slowest
    vertices = np.column_stack([ii.ravel() * (width / n), jj.ravel() * (height / n)])

    ci, cj = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (cj * (n + 1) + ci).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)

    on_edge = (ii == 0) | (ii == n) | (jj == 0) | (jj == n)
    boundary = np.flatnonzero(on_edge.ravel())
    for arr in (vertices, triangles, boundary):
        arr.setflags(write=False)
    return Mesh(vertices, triangles, boundary, level, float(np.hypot(width / n, height / n)),
                float(width), float(height), int(n0))


def build_unit_square(level):
    return build_rectangle(level)


def refine(mesh):
    """Uniform refinement: the next level of the same structured family."""
    return build_rectangle(mesh.level + 1, mesh.width, mesh.height, mesh.n0)


def boundary_dofs(mesh, bc):
    if check_bc(bc) == DIRICHLET:
        return mesh.boundary_vertices
    return np.empty(0, dtype=np.int64)


def _coarse_basis_at(coarse, fine):
    """Rows, columns and values of phi_i(x_j) for coarse basis i, fine vertex j."""
    ratio = 2 ** (fine.level - coarse.level)
    nc = coarse.n_per_side
    nf = fine.n_per_side
    idx = np.arange((nf + 1) ** 2)
    fi, fj = idx % (nf + 1), idx // (nf + 1)
    ci = np.minimum(fi // ratio, nc - 1)
    cj = np.minimum(fj // ratio, nc - 1)
    # local cell coordinates in [0, 1]; exact because ratio is a power of two
    s = fi / ratio - ci
    t = fj / ratio - cj
    v00 = cj * (nc + 1) + ci
    v10, v01, v11 = v00 + 1, v00 + nc + 1, v00 + nc + 2
    lower = t <= s

    rows = np.concatenate([
        v00, np.where(lower, v10, v11), np.where(lower, v11, v01),
    ])
    vals = np.concatenate([
        np.where(lower, 1.0 - s, 1.0 - t),
        np.where(lower, s - t, s),
        np.where(lower, t, t - s),
    ])
    cols = np.concatenate([idx, idx, idx])
    keep = vals != 0.0
    return rows[keep], cols[keep], vals[keep]


def prolongation(coarse, fine, bc=NEUMANN):
    """Matrix ``A`` with ``A[i, j] = phi_i(x_j)`` (coarse basis at fine vertices).

    ``A.T @ alpha`` maps coarse nodal coefficients to fine ones and ``A @ b``
    maps a fine load vector to the coarse load vector.  With Dirichlet
    conditions rows and columns of eliminated boundary vertices are dropped.
    """
    if not coarse.same_family(fine) or fine.level <= coarse.level:
        raise MeshError(
            f"meshes are not nested: coarse level {coarse.level}, fine level {fine.level}")
    key = ("prolongation", fine.level, check_bc(bc))
    if key in coarse._cache:
        return coarse._cache[key]
    rows, cols, vals = _coarse_basis_at(coarse, fine)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(coarse.n_vertices, fine.n_vertices))
    A.sort_indices()
    if bc == DIRICHLET:
        A = A[coarse.free_dofs(bc)][:, fine.free_dofs(bc)].tocsr()
    coarse._cache[key] = A
    return A


def write_mesh(mesh, path):
    flags = np.zeros(mesh.n_vertices, dtype=int)
    flags[mesh.boundary_vertices] = 1
    with open(path, "w") as fh:
        fh.write(f"vertices {mesh.n_vertices} triangles {mesh.n_triangles}\n")
        for (x, y), b in zip(mesh.vertices, flags):
            fh.write(f"{float(x)!r} {float(y)!r} {b}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def read_mesh(path):
    """Read a mesh dump back as ``(vertices, triangles, boundary_vertices)``."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "vertices" or header[2] != "triangles":
            raise MeshError(f"bad mesh header: {' '.join(header)!r}")
        nv, nt = int(header[1]), int(header[3])
        vdata = np.loadtxt(fh, max_rows=nv, ndmin=2)
        tdata = np.loadtxt(fh, max_rows=nt, dtype=np.int64, ndmin=2)
    if vdata.shape != (nv, 3) or tdata.shape != (nt, 3):
        raise MeshError("mesh dump is truncated")
    return vdata[:, :2], tdata, np.flatnonzero(vdata[:, 2] != 0)
