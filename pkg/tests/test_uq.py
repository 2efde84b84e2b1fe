import numpy as np
import pytest
from scipy.stats import kstest, norm

from atmodel.bernstein import SupportBounds
from atmodel.core import ModelSpec, ParamVector, RowSet, SupervisedRow, at_to_ar, forward
from atmodel.data import build_rows, gen_ar
from atmodel.likelihood import BaseDistribution
from atmodel.trainer import TrainConfig, chronological_split, fit
from atmodel.uq import (CovarianceEstimate, h_covariance, information_estimates,
                        invert_transform, parametric_bootstrap, simulate_like, grid_mass)
from conftest import random_model
from helpers import exact_mle

UNIT = SupportBounds(0.0, 1.0)


def no_lag_rows(y, n_series=1):
    n = len(y)
    return RowSet(y, np.zeros((n, 0)), np.zeros((n, 0)), np.zeros(n))


def ar1_fixture(seed, T=1000, phi=0.4):
    data = gen_ar(1, [phi], T, 1.0, seed)
    spec = ModelSpec(M=1, p=1, bounds=SupportBounds.from_data(data.y))
    rows = build_rows(data, 1)
    return spec, rows


def test_gaussian_location_sandwich():
    y = np.random.default_rng(0).standard_normal(10000)
    spec = ModelSpec(M=1, p=0, bounds=UNIT, n_series=1)
    params = ParamVector.from_theta([0.0, 1.0], beta_series=[-y.mean()])
    cov = information_estimates(params, no_lag_rows(y), spec, fixed=(0, 1))
    assert cov.sandwich[2, 2] == pytest.approx(1 / 10000, rel=0.05)
    assert cov.I_hat[2, 2] == pytest.approx(1.0, abs=1e-6)
    assert not cov.sandwich[:2].any() and not cov.sandwich[:, :2].any()


def test_information_equality_well_specified():
    spec, rows = ar1_fixture(1, T=5000)
    params = exact_mle(spec, rows)
    cov = information_estimates(params, rows, spec)
    scale = np.sqrt(np.outer(np.diag(cov.I_hat), np.diag(cov.I_hat)))
    assert np.max(np.abs(cov.I_hat - cov.J_hat) / scale) < 0.2
    np.testing.assert_allclose(cov.sandwich, cov.sandwich.T, atol=1e-8)
    assert np.all(np.linalg.eigvalsh(cov.sandwich) > -1e-12)
    assert np.all(np.linalg.eigvalsh(cov.J_hat) > -1e-12)


def test_redundant_shift_is_singular():
    spec, rows = ar1_fixture(2, T=300)
    spec = ModelSpec(M=1, p=1, bounds=spec.bounds, n_series=1)
    params = exact_mle(spec, rows)
    with pytest.raises(np.linalg.LinAlgError, match="information singular"):
        information_estimates(params, rows, spec)
    cov = information_estimates(params, rows, spec, fixed=(0,))
    assert cov.sandwich[0, 0] == 0.0 and cov.sandwich[3, 3] > 0


def test_h_covariance():
    rng = np.random.default_rng(3)
    spec, params = random_model(rng, 5, 2, n_series=1)
    v = spec.n_params
    ctx = SupervisedRow(0.0, np.array([0.1, 0.5]), np.zeros(0), 0)
    zero = CovarianceEstimate(np.eye(v), np.eye(v), np.zeros((v, v)), 100)
    assert not h_covariance(zero, [0.0, 1.0, 2.0], ctx, params, spec).any()

    shift_spec = ModelSpec(M=1, p=0, bounds=UNIT, n_series=1)
    sw = np.zeros((3, 3))
    sw[2, 2] = 0.37
    cov = CovarianceEstimate(np.eye(3), np.eye(3), sw, 100)
    out = h_covariance(cov, [0.4], SupervisedRow(0.0), ParamVector.from_theta([0, 1], beta_series=[0.2]), shift_spec)
    assert out[0, 0] == pytest.approx(0.37, abs=1e-15)

    A = rng.normal(size=(v, v))
    cov = CovarianceEstimate(np.eye(v), np.eye(v), A @ A.T / v, 100)
    for _ in range(100):
        grid = rng.uniform(-5, 6, size=int(rng.integers(1, 20)))
        assert np.all(np.diag(h_covariance(cov, grid, ctx, params, spec)) >= 0)


def test_invert_examples():
    spec = ModelSpec(M=1, p=0, bounds=UNIT, n_series=1)
    ident = ParamVector.from_theta([0, 1], beta_series=[0.0])
    shifted = ParamVector.from_theta([0, 1], beta_series=[0.5])
    ctx = SupervisedRow(0.0)
    assert invert_transform(0.25, ctx, ident, spec) == pytest.approx(0.25, abs=1e-9)
    assert invert_transform(0.75, ctx, shifted, spec) == pytest.approx(0.25, abs=1e-9)


def test_invert_roundtrip():
    rng = np.random.default_rng(4)
    for _ in range(5):
        spec, params = random_model(rng, int(rng.integers(1, 31)), 2, base="standard_logistic", scale=2.0)
        ctx = SupervisedRow(0.0, rng.normal(size=2))
        z = rng.uniform(-4, 4, 1000)
        y = invert_transform(z, ctx, params, spec)
        rows = RowSet(y, np.tile(ctx.lags, (1000, 1)), np.zeros((1000, 0)), np.zeros(1000))
        assert np.max(np.abs(forward(params, rows, spec).h - z)) < 1e-6


def test_pit_uniformity_on_simulated_data():
    rng = np.random.default_rng(5)
    spec = ModelSpec(M=6, p=2, bounds=SupportBounds(-3, 3))
    params = ParamVector.from_theta(np.linspace(-2.5, 2.5, 7) ** 3 / 4 + np.linspace(-1, 1, 7),
                                    phi=[-0.3, -0.1])
    template = RowSet(np.zeros(200), np.zeros((200, 2)), np.zeros((200, 0)), np.zeros(200))
    dist = BaseDistribution(spec.base)
    crit = 1.63 / np.sqrt(200)
    passes = 0
    for _ in range(100):
        sim = simulate_like(params, spec, template, rng)
        pit = dist.cdf(forward(params, sim, spec).h)
        passes += kstest(pit, "uniform").statistic < crit
    assert passes >= 95


def test_simulated_rows_feed_back_lags():
    rng = np.random.default_rng(6)
    spec, params = random_model(rng, 3, 2)
    template = RowSet(np.zeros(10), np.tile([0.3, 0.1], (10, 1)), np.zeros((10, 0)), np.zeros(10))
    sim = simulate_like(params, spec, template, rng)
    np.testing.assert_array_equal(sim.lags[0], [0.3, 0.1])
    np.testing.assert_array_equal(sim.lags[1:, 0], sim.y[:-1])
    np.testing.assert_array_equal(sim.lags[2:, 1], sim.y[:-2])


@pytest.fixture(scope="module")
def fitted_ar1():
    spec, rows = ar1_fixture(7, T=1000)
    cfg = TrainConfig(seed=0, epochs=500)
    res = fit(spec, rows, cfg)
    cov = information_estimates(res.params, rows, spec)
    return spec, rows, res, cov, cfg


def test_bootstrap_contract(fitted_ar1):
    spec, rows, res, cov, cfg = fitted_ar1
    grid = np.linspace(spec.bounds.lower - 0.5 * spec.bounds.width,
                       spec.bounds.upper + 0.5 * spec.bounds.width, 512)
    ctx = rows.row(len(rows) - 1)
    a = parametric_bootstrap(res, cov, rows, spec, 3, 11, grid, ctx, cfg)
    b = parametric_bootstrap(res, cov, rows, spec, 3, 11, grid, ctx, cfg)
    for pa, pb in zip(a.replicate_params, b.replicate_params):
        assert pa.to_flat().tobytes() == pb.to_flat().tobytes()
    for d in a.replicate_density_grids:
        assert np.all(d >= 0) and grid_mass(d, grid) == pytest.approx(1.0, abs=1e-2)
    recs = list(a.records())
    assert [r["nu"] for r in recs] == [1, 2, 3] and not any(r["failed"] for r in recs)


def test_bootstrap_degenerate_draw(fitted_ar1):
    spec, rows, res, cov, cfg = fitted_ar1
    zero = CovarianceEstimate(cov.I_hat, cov.J_hat, np.zeros_like(cov.sandwich), cov.n_obs)
    grid = np.linspace(spec.bounds.lower, spec.bounds.upper, 256)
    ctx = rows.row(0)
    out = parametric_bootstrap(res, zero, rows, spec, 1, 3, grid, ctx, cfg)
    from atmodel.uq import density_on_grid
    fitted = density_on_grid(res.params, spec, ctx, grid)
    assert np.max(np.abs(out.replicate_density_grids[0] - fitted)) < 0.05


def test_bootstrap_jsonl(fitted_ar1, tmp_path):
    import json
    spec, rows, res, cov, cfg = fitted_ar1
    grid = np.linspace(-1, 1, 16)
    out = parametric_bootstrap(res, cov, rows, spec, 2, 0, grid, rows.row(0), cfg)
    path = tmp_path / "b.jsonl"
    out.write_jsonl(path)
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert set(recs[0]) == {"nu", "params", "density_grid", "failed"}
    assert len(recs[1]["params"]) == spec.n_params and len(recs[1]["density_grid"]) == 16


@pytest.mark.slow
def test_sandwich_scales_like_inverse_T():
    ratios = []
    for seed in range(100):
        out = []
        for T in (500, 2000):
            spec, rows = ar1_fixture(10_000 + seed, T=T)
            cov = information_estimates(exact_mle(spec, rows), rows, spec)
            out.append(cov.sandwich[2, 2])
        ratios.append(out[0] / out[1])
    assert 3.0 <= np.mean(ratios) <= 5.5


@pytest.mark.slow
def test_wald_coverage_ar1():
    z = norm.ppf(0.95)
    hits = 0
    for seed in range(200):
        spec, rows = ar1_fixture(20_000 + seed)
        res = fit(spec, rows, TrainConfig(seed=seed))
        train_idx, _ = chronological_split(rows, 0.1)
        cov = information_estimates(res.params, rows.subset(train_idx), spec)
        ar = at_to_ar(res.params, spec)[1][0]
        se = cov.std_errors()[2]  # ar = -phi, same standard error
        hits += abs(ar - 0.4) <= z * se
    assert 0.85 <= hits / 200 <= 0.95


def _theta_space_nll(x, rows, spec):
    m = spec.M + 1
    rest = x[m:]
    pv = ParamVector.from_theta(x[:m], rest[:spec.p], rest[spec.p:spec.p + spec.n_series],
                                rest[spec.p + spec.n_series:])
    from atmodel.likelihood import nll
    return nll(pv, rows, spec)


def test_theta_information_matches_finite_differences():
    from conftest import random_rows
    rng = np.random.default_rng(8)
    for base in ("standard_normal", "standard_logistic"):
        spec, params = random_model(rng, 4, 2, 2, 1, base)
        rows = random_rows(rng, spec, 300)
        cov = information_estimates(params, rows, spec, coords="theta", fixed=(0,))
        x0 = np.concatenate([params.theta, params.to_flat()[spec.M + 1:]])
        v, h = x0.size, 1e-4
        H = np.empty((v, v))
        for i in range(v):
            for j in range(v):
                ei, ej = np.eye(v)[i] * h, np.eye(v)[j] * h
                H[i, j] = (_theta_space_nll(x0 + ei + ej, rows, spec) - _theta_space_nll(x0 + ei - ej, rows, spec)
                           - _theta_space_nll(x0 - ei + ej, rows, spec)
                           + _theta_space_nll(x0 - ei - ej, rows, spec)) / (4 * h * h)
        np.testing.assert_allclose(cov.I_hat, H, atol=1e-5 * np.abs(H).max())


def test_theta_coordinates_agree_at_mle():
    from conftest import random_rows
    rng = np.random.default_rng(5)
    spec, params = random_model(rng, 4, 1, 0, 1)
    rows = random_rows(rng, spec, 400)
    mle = exact_mle(spec, rows, params)
    a = information_estimates(mle, rows, spec, coords="theta")
    b = information_estimates(mle, rows, spec)
    k = slice(spec.M + 1, None)
    np.testing.assert_allclose(a.sandwich[k, k], b.sandwich[k, k], atol=1e-8 * np.abs(b.sandwich[k, k]).max())
    with pytest.raises(ValueError, match="coordinates"):
        information_estimates(mle, rows, spec, coords="polar")
