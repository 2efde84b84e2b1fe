import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atmodel.bernstein import SupportBounds
from atmodel.core import (ATModel, ModelSpec, ParamVector, RowSet, at_to_ar, constrain,
                          init_params, transform, unconstrain)
from conftest import random_model, random_rows

UNIT = SupportBounds(0.0, 1.0)
LOG2 = math.log(2.0)


def theta_params(theta, phi=(), beta_series=(), beta_exog=()):
    return ParamVector.from_theta(np.asarray(theta, float), phi, beta_series, beta_exog)


def test_constrain_examples():
    np.testing.assert_allclose(constrain([0.0, 50.0]), [0.0, 50.0], atol=1e-12)
    np.testing.assert_allclose(constrain([-1.0, 0.0]), [-1.0, -1.0 + LOG2])
    np.testing.assert_allclose(constrain([0.0, 0.0, 0.0]), [0.0, LOG2, 2 * LOG2])


def test_constrain_extreme_values_stay_finite():
    theta = constrain([0.0, 800.0, -800.0])
    assert np.all(np.isfinite(theta)) and theta[1] == pytest.approx(800.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-8, 15), min_size=2, max_size=12))
def test_unconstrain_inverts_constrain(raw):
    gamma = np.array(raw)
    np.testing.assert_allclose(unconstrain(constrain(gamma)), gamma, atol=1e-9, rtol=0)


def test_transform_examples():
    spec = ModelSpec(M=1, p=0, bounds=UNIT)
    h, dh = transform(0.25, [], [], 0, theta_params([0, 1]), spec)
    assert h == pytest.approx(0.25, abs=1e-12) and dh == pytest.approx(1.0, abs=1e-12)

    spec1 = ModelSpec(M=1, p=1, bounds=UNIT)
    h, _ = transform(0.25, [0.5], [], 0, theta_params([0, 1], phi=[-0.4]), spec1)
    assert h == pytest.approx(0.05, abs=1e-12)

    spec_s = ModelSpec(M=1, p=0, bounds=UNIT, n_series=2)
    h, _ = transform(0.0, [], [], 0, theta_params([0, 1], beta_series=[1.5, -3.0]), spec_s)
    assert h == pytest.approx(1.5, abs=1e-12)


def test_transform_rejects_nonfinite():
    spec = ModelSpec(M=1, p=1, bounds=UNIT)
    with pytest.raises(ValueError):
        transform(0.1, [float("nan")], [], 0, theta_params([0, 1], phi=[0.1]), spec)


def test_outcome_units_scale_derivative():
    spec = ModelSpec(M=1, p=0, bounds=SupportBounds(0.0, 4.0))
    _, dh = transform(1.0, [], [], 0, theta_params([0, 1]), spec)
    assert dh == pytest.approx(0.25)


def test_strict_monotonicity(rng):
    for _ in range(100):
        M = int(rng.integers(1, 31))
        p = int(rng.integers(0, 4))
        spec, params = random_model(rng, M, p, n_series=2, n_exog=1, scale=2.0)
        lo, w = spec.bounds.lower, spec.bounds.width
        grid = np.sort(rng.uniform(lo - 2 * w, lo + 3 * w, 100))
        grid = np.unique(grid)
        ctx_lags = rng.normal(size=p)
        rows = RowSet(grid, np.tile(ctx_lags, (grid.size, 1)), np.ones((grid.size, 1)),
                      np.zeros(grid.size, int))
        from atmodel.core import forward
        h = forward(params, rows, spec).h
        assert np.all(np.diff(h) > 0)


def test_shift_additivity(rng):
    spec, params = random_model(rng, 6, 2, n_series=3)
    shifted = ParamVector(params.gamma, params.phi, params.beta_series.copy(), params.beta_exog)
    for y in rng.uniform(-3, 4, 20):
        for c in (-1.3, 0.0, 2.5):
            shifted.beta_series[1] = params.beta_series[1] + c
            h0, d0 = transform(y, [0.3, -0.2], [], 1, params, spec)
            h1, d1 = transform(y, [0.3, -0.2], [], 1, shifted, spec)
            assert h1 - h0 == pytest.approx(c, abs=1e-12)
            assert d1 == d0


@pytest.mark.parametrize("theta, phi, expected", [
    ((0, 1), (-0.4,), (0.0, [0.4], 1.0)),
    ((0, 2), (), (0.0, [], 0.5)),
    # corrected mapping: ar_j = -phi_j (see README "AR equivalence")
    ((1, 2), (-0.5,), (-0.5, [0.5], 1.0)),
])
def test_at_to_ar_examples(theta, phi, expected):
    spec = ModelSpec(M=1, p=len(phi), bounds=UNIT)
    intercept, ar, sigma = at_to_ar(theta_params(theta, phi), spec)
    assert intercept == pytest.approx(expected[0], abs=1e-12)
    np.testing.assert_allclose(ar, expected[1], atol=1e-12)
    assert sigma == pytest.approx(expected[2], abs=1e-12)


def test_at_to_ar_requires_m1():
    spec = ModelSpec(M=2, p=0, bounds=UNIT)
    with pytest.raises(ValueError, match="only for M=1"):
        at_to_ar(init_params(spec), spec)


def test_at_to_ar_outcome_units_reproduce_transform(rng):
    spec = ModelSpec(M=1, p=2, bounds=SupportBounds(-3.0, 5.0), n_series=1)
    params = theta_params([0.4, 1.7], phi=[-0.3, 0.1], beta_series=[0.2])
    intercept, ar, sigma = at_to_ar(params, spec, units="outcome")
    for _ in range(20):
        y, l1, l2 = rng.uniform(-3, 5, 3)
        h, dh = transform(y, [l1, l2], [], 0, params, spec)
        assert h == pytest.approx((y - intercept - ar[0] * l1 - ar[1] * l2) / sigma, abs=1e-10)
        assert dh == pytest.approx(1 / sigma, rel=1e-12)


@pytest.mark.parametrize("M, expected", [(1, [-2, 2]), (3, [-2, -2 / 3, 2 / 3, 2])])
def test_init_params(M, expected):
    spec = ModelSpec(M=M, p=2, bounds=UNIT, n_series=2, n_exog=1)
    params = init_params(spec)
    np.testing.assert_allclose(params.theta, expected, atol=1e-12)
    assert not params.phi.any() and not params.beta_series.any() and not params.beta_exog.any()
    assert init_params(spec).to_flat().tolist() == params.to_flat().tolist()


@pytest.mark.parametrize("kw", [dict(M=0, p=0), dict(M=65, p=0), dict(M=1, p=33),
                                dict(M=1, p=0, base="cauchy"), dict(M=1, p=0, n_series=-1)])
def test_model_spec_validation(kw):
    with pytest.raises(ValueError):
        ModelSpec(bounds=UNIT, **kw)


def test_flat_roundtrip(rng):
    spec, params = random_model(rng, 4, 2, n_series=2, n_exog=3)
    back = ParamVector.from_flat(params.to_flat(), spec)
    np.testing.assert_array_equal(back.to_flat(), params.to_flat())
    with pytest.raises(ValueError):
        ParamVector.from_flat(np.zeros(3), spec)


def test_model_json_roundtrip_is_bit_faithful(rng, tmp_path):
    spec, params = random_model(rng, 9, 3, n_series=2, n_exog=1, base="standard_logistic")
    params = ParamVector.from_flat(params.to_flat() * np.pi / 7.0, spec)
    model = ATModel(spec, params, {"seed": 3, "epochs_run": 10, "final_nll": 1.2345678901234567},
                    ["a", "b"])
    path = tmp_path / "m.json"
    model.save(path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"spec", "gamma", "phi", "beta_series", "beta_exog", "bounds", "training_meta"}
    assert set(doc["training_meta"]) == {"seed", "epochs_run", "final_nll"}
    back = ATModel.load(path)
    assert back.spec == spec
    assert back.series_levels == ["a", "b"]
    assert back.params.to_flat().tobytes() == params.to_flat().tobytes()
    assert back.training_meta["final_nll"] == 1.2345678901234567
