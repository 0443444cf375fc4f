import dataclasses

import numpy as np
import pytest

from nested_spde import harness
from nested_spde.config import ExperimentConfig
from nested_spde.errors import ConfigError
from nested_spde.harness import (CSV_HEADER, ErrorReport, ErrorRow, coupled_squared_errors,
                                 fit_rate, pathwise_error, rms_with_jackknife,
                                 strong_error_study, time_rate_study)
from nested_spde.mesh import build_unit_square, prolongation

SMALL = ExperimentConfig(gamma=1.0, T=0.25, dt=2.0 ** -4, levels=(1, 2), level_ref=3,
                         replicates=6, seed=4)


# -- rate fitting ------------------------------------------------------------

def test_fit_exact_power_law():
    h = 2.0 ** -np.arange(1, 6)
    slope, intercept, res = fit_rate(h, h ** 2)
    assert slope == pytest.approx(2.0, abs=1e-12)
    assert intercept == pytest.approx(0.0, abs=1e-12)
    assert np.max(np.abs(res)) < 1e-12


def test_fit_constant():
    assert fit_rate([0.5, 0.25, 0.125], [3.0, 3.0, 3.0])[0] == pytest.approx(0.0, abs=1e-14)


def test_fit_noisy_synthetic():
    h = 2.0 ** -np.arange(1, 7)
    e = 3 * h ** 1.5 * (1 + 0.01 * (-1) ** np.arange(6))
    assert abs(fit_rate(h, e)[0] - 1.5) <= 0.05


@pytest.mark.parametrize("x, e", [([1.0, 0.0], [1.0, 2.0]), ([1.0, 2.0], [1.0, -1.0]),
                                  ([1.0], [1.0]), ([1.0, 2.0], [1.0])])
def test_fit_rejects_bad_input(x, e):
    with pytest.raises(ValueError):
        fit_rate(x, e)


def test_jackknife():
    est, se = rms_with_jackknife([4.0, 4.0, 4.0])
    assert est == 2.0 and se == 0.0
    assert np.isnan(rms_with_jackknife([1.0])[1])
    # delta method: se(sqrt(mean)) ~ sd(q) / (2 sqrt(mean) sqrt(n))
    q = np.random.default_rng(0).exponential(size=4000)
    est, se = rms_with_jackknife(q)
    assert se == pytest.approx(q.std() / (2 * est * np.sqrt(len(q))), rel=0.02)


def test_stderr_shrinks_with_replicates():
    q = np.random.default_rng(1).exponential(size=6400)
    ses = [rms_with_jackknife(q[:n])[1] for n in (100, 400, 1600, 6400)]
    ratios = np.array(ses[:-1]) / np.array(ses[1:])
    assert np.all((ratios > 1.6) & (ratios < 2.5))


# -- coupled runs ------------------------------------------------------------

def test_degenerate_reference_gives_zero_error():
    cfg = dataclasses.replace(SMALL, levels=(2, 3), level_ref=3)
    with pytest.raises(ConfigError):
        strong_error_study(cfg)
    report = strong_error_study(cfg, allow_degenerate=True)
    assert report.rows[-1].level == 3
    assert report.rows[-1].error <= 1e-12


def test_deterministic_increment_matches_dense_replay(monkeypatch):
    """A single deterministic fine load at step 0, then none: dense replay on levels 1 and 3."""
    cfg = dataclasses.replace(SMALL, levels=(1,), level_ref=3, replicates=1)
    fine, coarse = build_unit_square(3), build_unit_square(1)
    x = fine.vertices
    load0 = (np.sin(3 * x[:, 0]) + x[:, 1])[:, None]

    def fake(seed, reps, step, factor, dt):
        return load0.copy() if step == 0 else np.zeros((factor.n, len(list(reps))))

    monkeypatch.setattr(harness, "sample_increments", fake)
    cache = harness.ContextCache(cfg)
    errs, _ = coupled_squared_errors(cfg, [(1, cfg.dt)], (3, cfg.dt), cache=cache)

    def dense_run(ctx, b0):
        M, T, K = ctx.M.toarray(), ctx.T.toarray(), ctx.K.toarray()
        a = np.zeros(len(M))
        for n in range(ctx.params.n_steps):
            b = b0 if n == 0 else np.zeros_like(b0)
            a = np.linalg.solve(M + ctx.dt * T, M @ a + M @ np.linalg.solve(K, b))
        return a

    A = prolongation(coarse, fine).toarray()
    af = dense_run(cache(3, cfg.dt), load0[:, 0])
    ac = dense_run(cache(1, cfg.dt), A @ load0[:, 0])
    d = af - A.T @ ac
    expected = d @ cache(3, cfg.dt).M.toarray() @ d
    assert errs[(1, cfg.dt)][0] == pytest.approx(expected, rel=1e-10)


def test_zero_noise_path_is_flagged(monkeypatch):
    monkeypatch.setattr(harness, "sample_increments",
                        lambda seed, reps, step, f, dt: np.zeros((f.n, len(list(reps)))))
    report = pathwise_error(SMALL)
    assert report.flagged and report.mode == "pathwise_absolute"
    assert all(r.error == 0.0 for r in report.rows)
    assert report.csv_text().splitlines()[1].startswith("pathwise_absolute,")


def test_pathwise_scale_invariance(monkeypatch):
    base = pathwise_error(SMALL).column("error")
    real = harness.sample_increments
    monkeypatch.setattr(harness, "sample_increments",
                        lambda *a: 37.0 * real(*a))
    scaled = pathwise_error(SMALL).column("error")
    np.testing.assert_allclose(scaled, base, rtol=1e-10)


def test_pathwise_decreases():
    cfg = dataclasses.replace(SMALL, T=1.0, dt=2.0 ** -6, levels=(1, 2, 3), level_ref=5)
    e = pathwise_error(cfg).column("error")
    assert np.all(np.diff(e) < 0)


def test_level_order_invariance():
    targets = [(1, SMALL.dt), (2, SMALL.dt)]
    a, _ = coupled_squared_errors(SMALL, targets, (3, SMALL.dt))
    b, _ = coupled_squared_errors(SMALL, targets[::-1], (3, SMALL.dt))
    for t in targets:
        np.testing.assert_array_equal(a[t], b[t])


def test_batch_size_invariance():
    a = strong_error_study(SMALL)
    b = strong_error_study(dataclasses.replace(SMALL, batch_size=4))
    assert a.csv_text() == b.csv_text()


def test_strong_study_rows_and_rate():
    cfg = dataclasses.replace(SMALL, T=0.5, levels=(1, 2, 3), level_ref=4, replicates=20)
    report = strong_error_study(cfg)
    h = report.column("h")
    assert np.all(np.diff(h) < 0)
    assert np.all(report.column("error") > 0)
    assert np.all(report.column("stderr") > 0)
    assert 1.0 < report.slope < 2.5
    assert len(report.residuals) == 3


def test_time_rate_reference_step_gives_zero():
    cfg = dataclasses.replace(SMALL, level=2, dt_ref=2.0 ** -6,
                              dt_ladder=(2.0 ** -4, 2.0 ** -5, 2.0 ** -6))
    report = time_rate_study(cfg)
    assert report.against == "dt"
    assert report.rows[-1].error <= 1e-14
    assert report.rows[0].error > report.rows[1].error > 0
    # the zero row is left out of the fit
    assert np.isfinite(report.slope) and len(report.residuals) == 2


def test_time_rate_with_drift():
    cfg = dataclasses.replace(SMALL, nonlinearity="sin", level=2, dt_ref=2.0 ** -7,
                              dt_ladder=(2.0 ** -3, 2.0 ** -4, 2.0 ** -5), initial=1.0)
    report = time_rate_study(cfg)
    e = report.column("error")
    assert np.all(np.diff(e) < 0)
    assert np.isfinite(report.slope)


def test_fractional_noise_records_k():
    cfg = dataclasses.replace(SMALL, gamma=0.5)
    report = strong_error_study(cfg)
    assert [r.k for r in report.rows] == [harness.resolve_k(cfg, r.h) for r in report.rows]
    assert report.rows[0].k == 1.0
    fixed = strong_error_study(dataclasses.replace(cfg, k=0.4))
    assert all(r.k == 0.4 for r in fixed.rows)


def test_gamma_one_k_is_nan():
    report = strong_error_study(SMALL)
    assert all(np.isnan(r.k) for r in report.rows)
    assert ",nan," in report.csv_text().splitlines()[1]


def test_target_finer_than_reference_rejected():
    with pytest.raises(ValueError):
        coupled_squared_errors(SMALL, [(4, SMALL.dt)], (3, SMALL.dt))


# -- CSV -----------------------------------------------------------------------

def test_csv_layout(tmp_path):
    rows = [ErrorRow(2, 0.5, 0.25, 1.0, float("nan"), 10, 0.125, 0.01),
            ErrorRow(3, 0.25, 0.25, 1.0, float("nan"), 10, np.float64(0.03125), 0.002)]
    report = ErrorReport("converge", rows, slope=np.float64(2.0), intercept=-0.6931471805599453)
    path = tmp_path / "r.csv"
    report.write_csv(path)
    assert path.read_text() == (
        CSV_HEADER + "\n"
        "converge,2,0.5,0.25,1.0,nan,10,0.125,0.01\n"
        "converge,3,0.25,0.25,1.0,nan,10,0.03125,0.002\n"
        "# slope=2.0 intercept=-0.6931471805599453\n")
    assert CSV_HEADER == "mode,level,h,dt,gamma,k,replicates,error,stderr"


def test_quad_and_noise_checks():
    report = harness.quad_check(level=2, gammas=(0.5,), ks=(1.0, 0.5))
    assert harness.quad_decay_ok(report) == {0.5: True}
    bad = ErrorReport("quad-check", [dataclasses.replace(report.rows[0], error=1e-3),
                                     dataclasses.replace(report.rows[1], error=5e-4)])
    assert harness.quad_decay_ok(bad) == {0.5: False}
    res = harness.noise_check(level=1, n_samples=2000)
    assert res.passed
