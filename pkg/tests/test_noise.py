import numpy as np
import pytest

from nested_spde.assembly import assemble_mass
from nested_spde.mesh import build_unit_square, prolongation
from nested_spde.noise import (NoiseStream, batch_normals, restrict_increment, sample_increment,
                               sample_increments, step_normals)
from nested_spde.sparse import mass_sqrt

N_SAMPLES = 10_000
DT = 2.0 ** -6


@pytest.fixture(scope="module")
def level2():
    M = assemble_mass(build_unit_square(2))
    return M, mass_sqrt(M)


def covariance_z(samples, target):
    n = samples.shape[1]
    C = samples @ samples.T / n
    d = np.diag(target)
    return np.max(np.abs(C - target) / np.sqrt((np.outer(d, d) + target ** 2) / n))


def test_increment_mean_is_zero(level2, backend):
    M, f = level2
    B = sample_increments(0, range(N_SAMPLES), 0, f, DT)
    se = np.sqrt(DT * M.diagonal() / N_SAMPLES)
    assert np.max(np.abs(B.mean(axis=1)) / se) <= 5.0


def test_increment_covariance(level2, backend):
    M, f = level2
    B = sample_increments(1, range(N_SAMPLES), 3, f, DT)
    assert covariance_z(B, DT * M.toarray()) <= 5.0


def test_replicates_are_independent(level2):
    _, f = level2
    a = sample_increments(2, range(0, 2 * N_SAMPLES, 2), 0, f, DT)
    b = sample_increments(2, range(1, 2 * N_SAMPLES, 2), 0, f, DT)
    a = a / a.std(axis=1, keepdims=True)
    b = b / b.std(axis=1, keepdims=True)
    corr = np.mean(a * b, axis=1)
    assert np.max(np.abs(corr)) * np.sqrt(N_SAMPLES) <= 5.0


def test_steps_are_independent(level2):
    _, f = level2
    a = sample_increments(2, range(N_SAMPLES), 0, f, DT)
    b = sample_increments(2, range(N_SAMPLES), 1, f, DT)
    corr = np.mean(a * b, axis=1) / (a.std(axis=1) * b.std(axis=1))
    assert np.max(np.abs(corr)) * np.sqrt(N_SAMPLES) <= 5.0


def test_orthonormal_probes(level2):
    # for u, v with u^T M v = delta, u^T b and v^T b are independent N(0, dt)
    M, f = level2
    Md = M.toarray()
    lam, V = np.linalg.eigh(Md)
    U = V[:, [0, -1]] / np.sqrt(lam[[0, -1]])
    np.testing.assert_allclose(U.T @ Md @ U, np.eye(2), atol=1e-12)
    B = sample_increments(4, range(N_SAMPLES), 0, f, DT)
    P = U.T @ B / np.sqrt(DT)
    se = 1 / np.sqrt(N_SAMPLES)
    assert np.all(np.abs(P.mean(axis=1)) <= 5 * se)
    assert np.all(np.abs(P.var(axis=1) - 1) <= 5 * np.sqrt(2) * se)
    assert abs(np.mean(P[0] * P[1])) <= 5 * se


def test_restriction_covariance(backend):
    coarse, fine = build_unit_square(1), build_unit_square(3)
    A = prolongation(coarse, fine)
    B = restrict_increment(sample_increments(5, range(N_SAMPLES), 0,
                                             mass_sqrt(assemble_mass(fine)), DT), A)
    assert covariance_z(B, DT * assemble_mass(coarse).toarray()) <= 5.0


def test_restriction_of_zero_and_shapes():
    A = prolongation(build_unit_square(1), build_unit_square(2))
    np.testing.assert_array_equal(restrict_increment(np.zeros(25), A), np.zeros(9))
    with pytest.raises(ValueError):
        restrict_increment(np.zeros(9), A)


def test_two_level_chain():
    m3, m4, m5 = (build_unit_square(l) for l in (3, 4, 5))
    b = np.random.default_rng(0).standard_normal(m5.n_vertices)
    direct = restrict_increment(b, prolongation(m3, m5))
    chained = restrict_increment(restrict_increment(b, prolongation(m4, m5)),
                                 prolongation(m3, m4))
    assert np.linalg.norm(direct - chained) <= 1e-12 * np.linalg.norm(direct)


def test_stream_replay_and_determinism(level2):
    _, f = level2
    s = NoiseStream(seed=7, replicate_id=3)
    first = [sample_increment(s, f, DT) for _ in range(3)]
    assert s.step == 3
    r = s.replay()
    again = [sample_increment(r, f, DT) for _ in range(3)]
    for a, b in zip(first, again):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(first[0], first[1])


def test_random_access_matches_stream():
    s = NoiseStream(seed=11, replicate_id=2)
    seq = [s.normals(5) for _ in range(4)]
    np.testing.assert_array_equal(step_normals(11, 2, 3, 5), seq[3])
    block = batch_normals(11, [0, 2], 3, 5)
    np.testing.assert_array_equal(block[:, 1], seq[3])


def test_batching_does_not_change_samples(level2):
    _, f = level2
    full = sample_increments(3, range(8), 5, f, DT)
    part = sample_increments(3, [5, 6], 5, f, DT)
    np.testing.assert_array_equal(full[:, 5:7], part)


def test_frozen_normals():
    # guards against silent changes of the generator or of the key derivation
    np.testing.assert_array_equal(
        step_normals(0, 0, 0, 3), [-0.8025458906390128, 0.45751928097784245, -0.31455873558038694])
    np.testing.assert_array_equal(step_normals(12345, 7, 99, 2),
                                  [1.0762444061859127, 0.15539348601025946])
    assert not np.array_equal(step_normals(1, 0, 0, 3), step_normals(0, 0, 0, 3))


def test_dt_must_be_positive(level2):
    _, f = level2
    with pytest.raises(ValueError):
        sample_increment(NoiseStream(0), f, 0.0)
