"""Projected cylindrical Wiener increments as finite element load vectors.

The vector of tested increments ``((dW, phi_1), ..., (dW, phi_N))`` is
Gaussian with covariance ``dt * M_h``; it is sampled as
``sqrt(dt) * L rho`` with ``L L^T = M_h`` and ``rho`` standard normal.

Normals come from a Philox generator whose key is derived from
``(seed, replicate)`` and whose counter encodes the time step, so any step
of any replicate can be regenerated without replaying the others.
"""
import functools
from dataclasses import dataclass, field

import numpy as np


@functools.lru_cache(maxsize=65536)
def _philox_key(seed, replicate):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replicate),))
    key = ss.generate_state(2, dtype=np.uint64)
    key.setflags(write=False)
    return key


def step_normals(seed, replicate, step, n):
    """The ``n`` standard normals of time step ``step`` of one replicate."""
    counter = np.array([0, 0, 0, int(step)], dtype=np.uint64)
    bitgen = np.random.Philox(key=_philox_key(seed, replicate), counter=counter)
    return np.random.Generator(bitgen).standard_normal(n)


def batch_normals(seed, replicates, step, n):
    """Normals of one step for several replicates, as an ``(n, len(replicates))`` block."""
    out = np.empty((n, len(replicates)))
    for c, r in enumerate(replicates):
        out[:, c] = step_normals(seed, r, step, n)
    return out


@dataclass
class NoiseStream:
    """Deterministic source of per-step normal vectors for one replicate."""
    seed: int
    replicate_id: int = 0
    step: int = field(default=0)

    def normals(self, n):
        z = step_normals(self.seed, self.replicate_id, self.step, n)
        self.step += 1
        return z

    def replay(self):
        return NoiseStream(self.seed, self.replicate_id)


def sample_increment(stream, mass_factor, dt):
    """One increment load vector with law ``N(0, dt * M_h)``; advances ``stream``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return np.sqrt(dt) * mass_factor.apply_sqrt(stream.normals(mass_factor.n))


def sample_increments(seed, replicates, step, mass_factor, dt):
    """Block version of :func:`sample_increment` for replicates run side by side."""
    z = batch_normals(seed, replicates, step, mass_factor.n)
    return np.sqrt(dt) * mass_factor.apply_sqrt(z)


def restrict_increment(fine_load, A):
    """Test a fine-mesh increment against the coarse basis: ``A @ fine_load``."""
    fine_load = np.asarray(fine_load, dtype=np.float64)
    if fine_load.shape[0] != A.shape[1]:
        raise ValueError(
            f"load has {fine_load.shape[0]} entries, prolongation expects {A.shape[1]}")
    return A @ fine_load
