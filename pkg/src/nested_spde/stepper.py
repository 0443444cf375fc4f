"""Backward Euler / nested finite element scheme in coefficient form.

One step solves

    (M + dt T) a^{n+1} = M a^n + dt M f(a^n) + M Q b^n

where ``b^n`` is the increment load vector, ``Q`` the (quadrature)
fractional inverse of the noise operator and ``f`` the nonlinearity applied
at the nodes.  States may be vectors or ``(ndof, nrep)`` blocks holding
independent replicates column by column.
"""
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import sparse
from .assembly import CoefficientField, assemble_form, assemble_mass, laplacian
from .fractional import FractionalOperator, SincQuadrature, quadrature_nodes
from .mesh import check_bc
from .noise import sample_increment

NONLINEARITIES = {
    "sin": (np.sin, 1.0),
}


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients and data of ``du = -A1 u dt + F(u) dt + A2^{-gamma} dW``.

    ``initial`` is ``None`` (zero), a constant, a nodal vector over all mesh
    vertices or a callable of the vertex coordinates.  ``initial_sampler``,
    when given, is called as ``initial_sampler(points, replicate)`` and
    overrides ``initial``.  ``shift`` is the coercivity shift of ``A1``;
    backward Euler does not need it, it is kept as metadata.
    """
    a1: CoefficientField
    a2: CoefficientField
    gamma: float
    bc: str = "neumann"
    nonlinearity: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lipschitz: Optional[float] = None
    initial: object = None
    initial_sampler: Optional[Callable] = None
    shift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "bc", check_bc(self.bc))
        # d = 2: gamma > d/4 - 1/2 = 0
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1] for d = 2, got {self.gamma}")
        if self.nonlinearity is not None and not (self.lipschitz and self.lipschitz > 0):
            raise ValueError("a nonlinearity needs a positive Lipschitz bound")

    def initial_vector(self, mesh, replicate=None):
        free = mesh.free_dofs(self.bc)
        pts = mesh.vertices[free]
        if self.initial_sampler is not None and replicate is not None:
            return np.asarray(self.initial_sampler(pts, replicate), dtype=np.float64)
        if self.initial is None:
            return np.zeros(len(free))
        if callable(self.initial):
            return np.asarray(self.initial(pts), dtype=np.float64)
        init = np.asarray(self.initial, dtype=np.float64)
        if init.ndim == 0:
            return np.full(len(free), float(init))
        if init.shape[0] == mesh.n_vertices:
            return init[free]
        if init.shape[0] == len(free):
            return init.copy()
        raise ValueError(f"initial vector has {init.shape[0]} entries for {len(free)} dofs")


def heat_model(gamma, bc="neumann", nonlinearity=None, initial=None):
    """``A1 = -Laplace``, ``A2 = I - Laplace`` on the unit square."""
    lipschitz = None
    if isinstance(nonlinearity, str):
        if nonlinearity == "none":
            nonlinearity = None
        else:
            try:
                nonlinearity, lipschitz = NONLINEARITIES[nonlinearity]
            except KeyError:
                raise ValueError(f"unknown nonlinearity {nonlinearity!r}") from None
    return ModelSpec(laplacian(0.0), laplacian(1.0), gamma, bc, nonlinearity, lipschitz, initial)


@dataclass(frozen=True)
class SchemeParams:
    dt: float
    T: float
    quad: SincQuadrature
    tol: float = sparse.DEFAULT_TOL

    def __post_init__(self):
        # T = 0 is allowed: a run of zero steps returns the initial state
        if not (self.dt > 0 and self.T >= 0):
            raise ValueError("dt must be positive and T nonnegative")
        n = round(self.T / self.dt)
        if abs(n * self.dt - self.T) > 1e-12 * max(self.T, self.dt):
            raise ValueError(f"T = {self.T} is not an integer multiple of dt = {self.dt}")

    @property
    def n_steps(self):
        return round(self.T / self.dt)


def scheme(dt, T, gamma, k=1.0, tol=sparse.DEFAULT_TOL):
    return SchemeParams(dt, T, quadrature_nodes(gamma, k), tol)


@dataclass(frozen=True, eq=False)
class SolverContext:
    mesh: object
    model: ModelSpec
    params: SchemeParams
    M: object
    T: object
    K: object
    lhs_factor: object
    noise_op: FractionalOperator
    mass_factor: sparse.CholeskyFactor
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def ndof(self):
        return self.M.shape[0]

    @property
    def dt(self):
        return self.params.dt

    def nodal(self, state):
        """Nonlinearity at the nodes times dt, as a load vector."""
        return self.params.dt * (self.M @ self.model.nonlinearity(state))

    def noise_commutes(self, n_probe=3, rtol=1e-9):
        """Whether ``M^{-1} T`` and ``M^{-1} K`` commute (probed on random vectors).

        When they do, and the drift is zero, the noise operator can be applied
        once to an accumulated load instead of at every step.
        """
        if "commutes" not in self._cache:
            rng = np.random.default_rng(12345)
            V = rng.standard_normal((self.ndof, n_probe))
            solve = self.mass_factor.solve
            a = self.T @ solve(self.K @ V)
            b = self.K @ solve(self.T @ V)
            scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
            self._cache["commutes"] = bool(np.linalg.norm(a - b) <= rtol * scale)
        return self._cache["commutes"]


def precompute(mesh, model, params):
    """Assemble ``M, T, K`` and factor everything the time loop needs."""
    bc = model.bc
    M = assemble_mass(mesh, bc)
    T = assemble_form(mesh, model.a1, bc)
    K = assemble_form(mesh, model.a2, bc)
    lhs = sparse.as_csr(M + params.dt * T)
    lhs_factor = sparse.factorize(lhs, sparse.is_symmetric(lhs))
    noise_op = FractionalOperator(M, K, params.quad)
    return SolverContext(mesh, model, params, M, T, K, lhs_factor, noise_op, sparse.mass_sqrt(M))


def step(ctx, state, noise_load, nonlinearity=True):
    """Advance one time step; ``nonlinearity=False`` drops the drift term."""
    theta = ctx.noise_op(noise_load)
    rhs = ctx.M @ (state + theta)
    if nonlinearity and ctx.model.nonlinearity is not None:
        rhs += ctx.nodal(state)
    return ctx.lhs_factor.solve(rhs)


@dataclass
class TrajectoryResult:
    final: np.ndarray
    snapshots: dict
    n_steps: int
    wall_time: float
    increments: Optional[list] = None


def run_trajectory(ctx, stream=None, increments=None, snapshot_times=(), initial=None,
                   keep_increments=False):
    """Iterate :func:`step` from the initial condition up to ``T``.

    Increments are taken verbatim from ``increments`` when given (coupled
    runs), otherwise drawn from ``stream``; with neither the run is
    noise free.
    """
    n_steps = ctx.params.n_steps
    if increments is not None and len(increments) != n_steps:
        raise ValueError(f"{len(increments)} increments supplied for {n_steps} steps")
    dt = ctx.params.dt
    wanted = {}
    for t in snapshot_times:
        n = round(t / dt)
        if abs(n * dt - t) > 1e-12 * max(t, dt) or not 0 <= n <= n_steps:
            raise ValueError(f"snapshot time {t} is not on the time grid")
        wanted[n] = t
    state = ctx.model.initial_vector(ctx.mesh) if initial is None else np.array(initial, float)
    snaps = {wanted[0]: state.copy()} if 0 in wanted else {}
    kept = [] if keep_increments else None
    start = time.perf_counter()
    for n in range(n_steps):
        if increments is not None:
            load = np.asarray(increments[n])
        elif stream is not None:
            load = sample_increment(stream, ctx.mass_factor, dt)
        else:
            load = np.zeros_like(state)
        if kept is not None:
            kept.append(load)
        state = step(ctx, state, load)
        if n + 1 in wanted:
            snaps[wanted[n + 1]] = state.copy()
    return TrajectoryResult(state, snaps, n_steps, time.perf_counter() - start, kept)


class Ensemble:
    """A block of replicates on one mesh level, advanced step by step.

    With ``deferred=True`` (zero drift and commuting operators, see
    :meth:`SolverContext.noise_commutes`) the noise operator is applied once
    at the end: the accumulated load obeys ``s <- M (M + dt T)^{-1} (s + b)``
    and the noise part of the state is ``Q s``.  This is algebraically the
    same scheme and turns the per-step cost into one solve.
    """

    def __init__(self, ctx, replicates, deferred=None):
        self.ctx = ctx
        self.replicates = list(replicates)
        R = len(self.replicates)
        linear = ctx.model.nonlinearity is None
        if deferred is None:
            deferred = linear and ctx.noise_commutes()
        if deferred and not linear:
            raise ValueError("deferred noise needs a zero drift")
        self.deferred = deferred
        model = ctx.model
        if model.initial_sampler is not None:
            init = np.column_stack([model.initial_vector(ctx.mesh, r) for r in self.replicates])
        else:
            init = np.repeat(model.initial_vector(ctx.mesh)[:, None], R, axis=1)
        self.steps = 0
        if deferred:
            self.load = np.zeros((ctx.ndof, R))
            # a shared deterministic initial state is propagated once
            self._shared = model.initial_sampler is None
            self.state = init[:, :1] if self._shared else init
            self._zero = not np.any(self.state)
        else:
            self.state = init

    def advance(self, load):
        ctx = self.ctx
        if self.deferred:
            self.load = ctx.M @ ctx.lhs_factor.solve(self.load + load)
            if not self._zero:
                self.state = ctx.lhs_factor.solve(ctx.M @ self.state)
        else:
            self.state = step(ctx, self.state, load)
        self.steps += 1

    def result(self):
        if not self.deferred:
            return self.state
        noise = self.ctx.noise_op(self.load)
        return noise + self.state if not self._zero else noise


def mass_norm_sq(M, X):
    """Column-wise ``x^T M x``."""
    X = np.asarray(X)
    if X.ndim == 1:
        return float(X @ (M @ X))
    return np.einsum("ij,ij->j", X, M @ X)


def n_steps_between(dt, dt_ref):
    ratio = dt / dt_ref
    r = round(ratio)
    if r < 1 or not math.isclose(ratio, r, rel_tol=1e-12):
        raise ValueError(f"dt = {dt} is not an integer multiple of dt_ref = {dt_ref}")
    return r
