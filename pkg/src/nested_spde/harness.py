"""Coupled multilevel error studies.

All levels are driven by one Brownian path: increments are sampled on the
reference mesh and time step, tested against each coarse basis through the
prolongation matrix, and summed over the fine sub-steps of every coarse
step.  The error of a coarse solution ``a`` against the reference ``a_ref``
is the quadratic form ``(a_ref - A^T a)^T M_ref (a_ref - A^T a)``.
"""
import io
import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .assembly import CoefficientField
from .config import ExperimentConfig
from .fractional import default_resolution, quadrature_nodes
from .mesh import build_unit_square, prolongation
from .noise import sample_increments
from .stepper import (NONLINEARITIES, Ensemble, ModelSpec, SchemeParams, mass_norm_sq,
                      n_steps_between, precompute)

log = logging.getLogger(__name__)

CSV_HEADER = "mode,level,h,dt,gamma,k,replicates,error,stderr"


def _num(x):
    # shortest round-trip representation, also for numpy scalars
    return repr(float(x))


@dataclass
class ErrorRow:
    level: int
    h: float
    dt: float
    gamma: float
    k: float
    replicates: int
    error: float
    stderr: float


@dataclass
class ErrorReport:
    mode: str
    rows: List[ErrorRow]
    slope: float = float("nan")
    intercept: float = float("nan")
    residuals: np.ndarray = field(default_factory=lambda: np.empty(0))
    against: str = "h"
    flagged: bool = False
    samples: dict = field(default_factory=dict, repr=False)

    def csv_text(self):
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        for r in self.rows:
            fields = [self.mode, str(int(r.level)), _num(r.h), _num(r.dt), _num(r.gamma),
                      _num(r.k), str(int(r.replicates)), _num(r.error), _num(r.stderr)]
            out.write(",".join(fields) + "\n")
        out.write(f"# slope={_num(self.slope)} intercept={_num(self.intercept)}\n")
        return out.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])


def fit_rate(x, errors):
    """Least-squares slope of ``log(errors)`` against ``log(x)``.

    Returns ``(slope, intercept, residuals)``.
    """
    x = np.asarray(x, dtype=np.float64)
    e = np.asarray(errors, dtype=np.float64)
    if x.shape != e.shape or x.size < 2:
        raise ValueError("need at least two (x, error) pairs of equal length")
    if np.any(~(x > 0)) or np.any(~(e > 0)):
        raise ValueError("rate fitting needs strictly positive values")
    lx, le = np.log(x), np.log(e)
    design = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(design, le, rcond=None)
    return float(slope), float(intercept), le - (slope * lx + intercept)


def rms_with_jackknife(q):
    """``sqrt(mean(q))`` and its jackknife standard error."""
    q = np.asarray(q, dtype=np.float64)
    n = q.size
    est = math.sqrt(max(q.mean(), 0.0))
    if n < 2:
        return est, float("nan")
    loo = np.sqrt(np.maximum((q.sum() - q) / (n - 1), 0.0))
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return est, se


def mean_with_stderr(x):
    x = np.asarray(x, dtype=np.float64)
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
    return float(x.mean()), se


# --------------------------------------------------------------------------
# model/context construction

def build_model(cfg: ExperimentConfig):
    a1 = CoefficientField(cfg.a1_diffusion, np.array([cfg.a1_advection_x, cfg.a1_advection_y]),
                          cfg.a1_reaction)
    a2 = CoefficientField(cfg.a2_diffusion, 0.0, cfg.a2_reaction, coercive=True)
    F, lip = (None, None) if cfg.nonlinearity == "none" else NONLINEARITIES[cfg.nonlinearity]
    initial = None if cfg.initial == 0 else cfg.initial
    return ModelSpec(a1, a2, cfg.gamma, cfg.bc, F, lip, initial)


def resolve_k(cfg, h):
    if cfg.gamma == 1.0:
        return float("nan")
    return cfg.k if cfg.k is not None else default_resolution(cfg.gamma, h, cfg.k_c0)


class ContextCache:
    """Solver contexts keyed by ``(level, dt)``; meshes shared per level."""

    def __init__(self, cfg, model=None):
        self.cfg = cfg
        self.model = model or build_model(cfg)
        self.meshes = {}
        self.contexts = {}

    def mesh(self, level):
        if level not in self.meshes:
            self.meshes[level] = build_unit_square(level)
        return self.meshes[level]

    def __call__(self, level, dt):
        key = (level, dt)
        if key not in self.contexts:
            mesh = self.mesh(level)
            k = resolve_k(self.cfg, mesh.h)
            quad = quadrature_nodes(self.cfg.gamma, 1.0 if math.isnan(k) else k)
            params = SchemeParams(dt, self.cfg.T, quad, self.cfg.tol)
            log.info("precompute level=%d dt=%g nodes=%d", level, dt, len(quad))
            self.contexts[key] = precompute(mesh, self.model, params)
        return self.contexts[key]


def coupled_squared_errors(cfg, targets, ref, replicates=None, cache=None):
    """Run coupled trajectories and return the per-replicate squared errors.

    ``targets`` and ``ref`` are ``(level, dt)`` pairs; every target level
    must not exceed the reference level and every target ``dt`` must be a
    multiple of the reference ``dt``.

    Returns ``(errors, ref_norms)``: a dict from target to an array of
    ``(a_ref - A^T a)^T M_ref (a_ref - A^T a)`` values, and the array of
    ``a_ref^T M_ref a_ref``.
    """
    cache = cache or ContextCache(cfg)
    replicates = list(range(cfg.replicates)) if replicates is None else list(replicates)
    ref_level, ref_dt = ref
    ref_ctx = cache(ref_level, ref_dt)
    ref_mesh = cache.mesh(ref_level)
    plans = []
    for level, dt in targets:
        if level > ref_level:
            raise ValueError(f"target level {level} is finer than the reference {ref_level}")
        ctx = cache(level, dt)
        A = None if level == ref_level else prolongation(cache.mesh(level), ref_mesh, cfg.bc)
        plans.append((ctx, A, n_steps_between(dt, ref_dt)))

    R = len(replicates)
    errors = {t: np.empty(R) for t in targets}
    ref_norms = np.empty(R)
    n_ref = ref_ctx.params.n_steps
    for b0 in range(0, R, cfg.batch_size):
        batch = replicates[b0:b0 + cfg.batch_size]
        ref_ens = Ensemble(ref_ctx, batch)
        ens = [Ensemble(ctx, batch) for ctx, _, _ in plans]
        buffers = [np.zeros((ctx.ndof, len(batch))) for ctx, _, _ in plans]
        for n in range(n_ref):
            load = sample_increments(cfg.seed, batch, n, ref_ctx.mass_factor, ref_dt)
            ref_ens.advance(load)
            for (ctx, A, ratio), e, buf in zip(plans, ens, buffers):
                buf += load if A is None else A @ load
                if (n + 1) % ratio == 0:
                    e.advance(buf)
                    buf[:] = 0.0
        a_ref = ref_ens.result()
        ref_norms[b0:b0 + len(batch)] = mass_norm_sq(ref_ctx.M, a_ref)
        for t, (ctx, A, _), e in zip(targets, plans, ens):
            a = e.result()
            diff = a_ref - (a if A is None else A.T @ a)
            errors[t][b0:b0 + len(batch)] = mass_norm_sq(ref_ctx.M, diff)
        log.info("replicates %d..%d done", batch[0], batch[-1])
    return errors, ref_norms


def strong_error_study(cfg, allow_degenerate=False, cache=None):
    """Root-mean-square errors of coarse levels against the reference level."""
    cfg.validate("converge", allow_degenerate)
    cache = cache or ContextCache(cfg)
    targets = [(level, cfg.dt) for level in sorted(set(cfg.levels))]
    errs, _ = coupled_squared_errors(cfg, targets, (cfg.level_ref, cfg.reference_dt), cache=cache)
    rows = []
    for level, dt in targets:
        h = cache.mesh(level).h
        err, se = rms_with_jackknife(errs[(level, dt)])
        rows.append(ErrorRow(level, h, dt, cfg.gamma, resolve_k(cfg, h), cfg.replicates, err, se))
    report = ErrorReport("converge", rows, samples=errs)
    return _fit(report, "h")


def pathwise_error(cfg, cache=None):
    """Relative errors ``e_h`` of one coupled sample path (replicate 0)."""
    cfg.validate("pathwise")
    cache = cache or ContextCache(cfg)
    targets = [(level, cfg.dt) for level in sorted(set(cfg.levels))]
    errs, ref_norm = coupled_squared_errors(cfg, targets, (cfg.level_ref, cfg.reference_dt),
                                            replicates=[0], cache=cache)
    flagged = not ref_norm[0] > 0
    rows = []
    for level, dt in targets:
        h = cache.mesh(level).h
        q = errs[(level, dt)][0]
        e = math.sqrt(q) if flagged else math.sqrt(q / ref_norm[0])
        rows.append(ErrorRow(level, h, dt, cfg.gamma, resolve_k(cfg, h), 1, e, float("nan")))
    mode = "pathwise_absolute" if flagged else "pathwise"
    if flagged:
        log.warning("reference path has zero norm; reporting absolute errors")
    report = ErrorReport(mode, rows, flagged=flagged, samples=errs)
    return _fit(report, "h")


def time_rate_study(cfg, cache=None):
    """Errors of a ``dt`` ladder against a fine-``dt`` run on the same mesh and path."""
    cfg.validate("time-rate")
    cache = cache or ContextCache(cfg)
    ladder = sorted(set(cfg.dt_ladder), reverse=True)
    targets = [(cfg.level, dt) for dt in ladder]
    errs, _ = coupled_squared_errors(cfg, targets, (cfg.level, cfg.reference_dt), cache=cache)
    h = cache.mesh(cfg.level).h
    rows = []
    for t in targets:
        err, se = rms_with_jackknife(errs[t])
        rows.append(ErrorRow(cfg.level, h, t[1], cfg.gamma, resolve_k(cfg, h), cfg.replicates,
                             err, se))
    report = ErrorReport("time-rate", rows, against="dt", samples=errs)
    return _fit(report, "dt")


def _fit(report, against):
    # rows with an exactly zero error (a target equal to the reference) are left out
    x = report.column(against)
    e = report.column("error")
    report.against = against
    keep = e > 0
    if keep.sum() >= 2:
        report.slope, report.intercept, report.residuals = fit_rate(x[keep], e[keep])
    return report


def mean_square_norm(cfg, level, dt, ref_level=None, ref_dt=None, cache=None):
    """Monte Carlo ``E ||u_h(T)||^2`` per replicate, optionally coupled to a finer run.

    With ``ref_level``/``ref_dt`` the increments come from that finer
    discretisation, so several calls share one Brownian path per replicate.
    """
    cache = cache or ContextCache(cfg)
    ref_level = level if ref_level is None else ref_level
    ref_dt = dt if ref_dt is None else ref_dt
    replicates = list(range(cfg.replicates))
    ref_ctx = cache(ref_level, ref_dt)
    ctx = cache(level, dt)
    A = None if level == ref_level else prolongation(cache.mesh(level), cache.mesh(ref_level),
                                                     cfg.bc)
    ratio = n_steps_between(dt, ref_dt)
    out = np.empty(len(replicates))
    for b0 in range(0, len(replicates), cfg.batch_size):
        batch = replicates[b0:b0 + cfg.batch_size]
        ens = Ensemble(ctx, batch)
        buf = np.zeros((ctx.ndof, len(batch)))
        for n in range(ref_ctx.params.n_steps):
            load = sample_increments(cfg.seed, batch, n, ref_ctx.mass_factor, ref_dt)
            buf += load if A is None else A @ load
            if (n + 1) % ratio == 0:
                ens.advance(buf)
                buf[:] = 0.0
        out[b0:b0 + len(batch)] = mass_norm_sq(ctx.M, ens.result())
    return out


# --------------------------------------------------------------------------
# module self-checks exposed on the command line

def quad_check(level=3, gammas=(0.25, 0.5, 0.75), ks=(1.0, 0.5, 0.25), bc="neumann", seed=0):
    """Quadrature error against the dense spectral oracle.

    The error is ``max|x_k - x| / max|x|`` for a fixed random load vector.
    Returns an :class:`ErrorReport` with one row per ``(gamma, k)``.
    """
    from .assembly import assemble_form, assemble_mass, laplacian
    from .fractional import apply_fractional_inverse, fractional_dense_oracle

    mesh = build_unit_square(level)
    M = assemble_mass(mesh, bc)
    K = assemble_form(mesh, laplacian(1.0), bc)
    b = np.random.default_rng(seed).standard_normal(M.shape[0])
    rows = []
    for gamma in gammas:
        exact = fractional_dense_oracle(M, K, gamma, b)
        scale = np.max(np.abs(exact))
        for k in ks:
            approx = apply_fractional_inverse(M, K, quadrature_nodes(gamma, k), b, tol=1e-13)
            err = float(np.max(np.abs(approx - exact)) / scale)
            rows.append(ErrorRow(level, mesh.h, float("nan"), gamma, k, 1, err, float("nan")))
    return ErrorReport("quad-check", rows, against="k")


def quad_decay_ok(report, factor=10.0, floor=1e-8):
    """Per gamma: errors decrease in ``1/k`` and drop ``factor``-fold per halving until ``floor``."""
    out = {}
    for gamma in sorted({r.gamma for r in report.rows}):
        errs = [r.error for r in sorted((r for r in report.rows if r.gamma == gamma),
                                        key=lambda r: -r.k)]
        ok = True
        for prev, cur in zip(errs, errs[1:]):
            if prev < floor:
                break
            ok &= cur < prev and (cur <= prev / factor or cur < floor)
        out[gamma] = bool(ok)
    return out


@dataclass
class NoiseCheck:
    n_samples: int
    max_z: float
    max_z_restricted: float
    threshold: float = 5.0

    @property
    def passed(self):
        return self.max_z <= self.threshold and self.max_z_restricted <= self.threshold


def _covariance_z(samples, target):
    """Entrywise ``|C_hat - C| / se`` with the Gaussian standard error ``sqrt((C_ii C_jj + C_ij^2)/n)``."""
    n = samples.shape[1]
    C = samples @ samples.T / n       # mean zero is known
    d = np.diag(target)
    se = np.sqrt((np.outer(d, d) + target ** 2) / n)
    return float(np.max(np.abs(C - target) / se))


def noise_check(level=2, n_samples=10_000, dt=2.0 ** -10, bc="neumann", seed=0):
    """Sample covariance of increments against ``dt * M`` on ``level`` and,
    for increments drawn on ``level + 1`` and restricted, against ``dt * M_coarse``."""
    from .assembly import assemble_mass
    from .sparse import mass_sqrt

    coarse, fine = build_unit_square(level), build_unit_square(level + 1)
    Mc, Mf = assemble_mass(coarse, bc), assemble_mass(fine, bc)
    reps = range(n_samples)
    direct = sample_increments(seed, reps, 0, mass_sqrt(Mc), dt)
    A = prolongation(coarse, fine, bc)
    restricted = A @ sample_increments(seed, reps, 1, mass_sqrt(Mf), dt)
    target = dt * Mc.toarray()
    return NoiseCheck(n_samples, _covariance_z(direct, target), _covariance_z(restricted, target))
