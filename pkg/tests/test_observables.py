"""Time-average accumulator, reference means, bias/MSE estimators.

Quadrature references are checked against an independently coded rule
(Gauss-Hermite for the 1D benchmark, exploiting its dominant Gaussian
factor) and against closed forms for a pure Gaussian target.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ubusampler.observables import (
    FunctionObserver,
    ReferenceMean,
    TimeAverageAccumulator,
    estimate_bias,
    estimate_mse,
    load_reference,
    reference_mean_longrun,
    reference_mean_quadrature,
    save_reference,
)
from ubusampler.potentials import PotentialModel, model_from_id
from ubusampler.potentials import TestFunction as Observable


# ---------------------------------------------------------------------------
# accumulator
# ---------------------------------------------------------------------------


def test_accumulator_matches_numpy_mean_variance():
    rng = np.random.default_rng(5)
    values = rng.normal(size=(300, 2))
    acc = TimeAverageAccumulator(out_dim=2)
    for v in values:
        acc.add(v)
    assert np.allclose(acc.mean, values.mean(axis=0), atol=1e-14)
    assert np.allclose(acc.variance, values.var(axis=0), atol=1e-13)
    assert acc.count == 300


def test_accumulator_compensation_beats_naive_sum():
    # many tiny increments after a large one: the compensated sum keeps
    # digits a naive float32-style accumulation order would lose
    acc = TimeAverageAccumulator(out_dim=1)
    acc.add(1e16)
    for _ in range(1000):
        acc.add(1.0)
    assert acc.total[0] == 1e16 + 1000.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=40),
       st.integers(min_value=1, max_value=39))
def test_accumulator_merge_equals_single_pass(values, split):
    split = min(split, len(values) - 1)
    one = TimeAverageAccumulator(out_dim=1)
    for v in values:
        one.add(v)
    left, right = TimeAverageAccumulator(1), TimeAverageAccumulator(1)
    for v in values[:split]:
        left.add(v)
    for v in values[split:]:
        right.add(v)
    merged = left.merge(right)
    assert merged.count == one.count
    assert np.allclose(merged.mean, one.mean, rtol=1e-12, atol=1e-12)


def test_function_observer_applies_test_function():
    fn = Observable(dim=1, out_dim=1,
                      f=lambda x: float(x[0]) ** 2,
                      grad=lambda x: np.array([[2 * x[0]]]),
                      hess=lambda x: np.array([[[2.0]]]))
    obs = FunctionObserver(fn)
    for v in (1.0, 2.0, 3.0):
        obs.observe(np.array([v]))
    assert np.allclose(obs.mean, (1 + 4 + 9) / 3)


# ---------------------------------------------------------------------------
# quadrature references
# ---------------------------------------------------------------------------


def gauss_hermite_reference_1d(model, fn, n=180):
    """Independent oracle: pi(f) with weight e^{-x^2/2} split out explicitly."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(n)
    rest = np.array([math.exp(-(model.u(np.array([x])) - 0.5 * x * x))
                     for x in nodes])
    fv = np.array([fn.f(np.array([x])) for x in nodes])
    return float(np.sum(weights * rest * fv) / np.sum(weights * rest))


def test_quadrature_reference_1d_against_gauss_hermite():
    model, fn = model_from_id("bench1d")
    ref = reference_mean_quadrature(model, fn, tol=1e-10)
    oracle = gauss_hermite_reference_1d(model, fn)
    assert abs(ref.value[0] - oracle) < 1e-11
    assert ref.error_bound < 1e-8
    assert abs(ref.value[0] - oracle) < ref.error_bound


@pytest.mark.filterwarnings("ignore::UserWarning")
@pytest.mark.filterwarnings("ignore:The occurrence of roundoff error")
def test_quadrature_reference_gaussian_closed_form():
    # U = x^2/2: pi(x^2) = 1 and pi(x) = 0 exactly
    quad = Observable(dim=1, out_dim=1, f=lambda x: float(x[0]) ** 2,
                        grad=lambda x: np.array([[2 * x[0]]]),
                        hess=lambda x: np.array([[[2.0]]]))
    ident = Observable(dim=1, out_dim=1, f=lambda x: float(x[0]),
                         grad=lambda x: np.array([[1.0]]),
                         hess=lambda x: np.array([[[0.0]]]))
    gauss = PotentialModel(name="gauss1d", dim=1, n_components=1,
                       constants={"m": 1.0, "M2": 1.0},
                       u=lambda x: 0.5 * float(x[0]) ** 2,
                       grad=lambda x: x.copy(),
                       hess=lambda x: np.eye(1),
                       third=lambda x: np.zeros((1, 1, 1)),
                       grad_i=lambda x, i: x.copy())
    assert abs(reference_mean_quadrature(gauss, quad).value[0] - 1.0) < 1e-11
    assert abs(reference_mean_quadrature(gauss, ident).value[0]) < 1e-11


def test_quadrature_reference_2d_symmetry():
    model, fn = model_from_id("bench2d")
    ref = reference_mean_quadrature(model, fn, tol=1e-9)
    assert np.isfinite(ref.value[0])
    assert ref.error_bound < 1e-6
    # independent check: 2d trapezoid on a fine grid agrees to its own accuracy
    xs = np.linspace(-10, 10, 801)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    dens = np.array([math.exp(-model.u(p)) for p in pts])
    fv = np.array([fn.f(p) for p in pts])
    coarse = float(np.sum(dens * fv) / np.sum(dens))
    assert abs(ref.value[0] - coarse) < 1e-4


def test_quadrature_reference_rejects_high_dim_and_vector_f():
    model10, fn10 = model_from_id("bench10d-fs:20")
    with pytest.raises(ValueError):
        reference_mean_quadrature(model10, fn10)
    model1, _ = model_from_id("bench1d")
    with pytest.raises(ValueError):
        reference_mean_quadrature(model1, fn10)


# ---------------------------------------------------------------------------
# long-run reference
# ---------------------------------------------------------------------------


def test_longrun_reference_brackets_quadrature():
    model, fn = model_from_id("bench1d")
    quad = reference_mean_quadrature(model, fn)
    long = reference_mean_longrun(model, fn, h_ref=0.05, t_ref=4000.0,
                                  replicas=8, seed=17, burnin_time=20.0)
    assert abs(long.value[0] - quad.value[0]) < long.error_bound + quad.error_bound
    assert long.error_bound < 0.05


# ---------------------------------------------------------------------------
# bias / MSE estimators
# ---------------------------------------------------------------------------


def test_estimate_bias_scalar_signed():
    ref = ReferenceMean(value=np.array([2.0]), error_bound=0.0)
    means = np.array([[2.5], [1.9], [2.3]])
    bias, stderr = estimate_bias(means, ref)
    devs = means[:, 0] - 2.0
    assert bias == pytest.approx(devs.mean())
    assert stderr == pytest.approx(devs.std(ddof=1) / math.sqrt(3))


def test_estimate_bias_vector_uses_norms():
    ref = ReferenceMean(value=np.array([1.0, -1.0]), error_bound=0.0)
    means = np.array([[1.3, -1.4], [0.8, -0.9]])
    bias, _ = estimate_bias(means, ref)
    norms = np.linalg.norm(means - ref.value, axis=1)
    assert bias == pytest.approx(norms.mean())


def test_estimate_bias_dimension_mismatch():
    ref = ReferenceMean(value=np.array([0.0, 0.0]), error_bound=0.0)
    with pytest.raises(ValueError):
        estimate_bias(np.array([[1.0]]), ref)


def test_estimate_mse_matches_definition():
    ref = ReferenceMean(value=np.array([1.0, 2.0]), error_bound=0.0)
    means = np.array([[1.5, 2.0], [1.0, 1.0]])
    want = np.mean(np.sum((means - ref.value) ** 2, axis=1))
    assert estimate_mse(means, ref) == pytest.approx(want)
    with pytest.raises(ValueError):
        estimate_mse(means[:1], ref)


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------


def test_reference_fixture_round_trip(tmp_path):
    ref = ReferenceMean(value=np.array([0.123456789012345, -7.0]),
                        error_bound=3.25e-11,
                        meta={"method": "quadrature", "model": "bench1d"})
    path = tmp_path / "ref.txt"
    save_reference(ref, path)
    back = load_reference(path)
    assert np.array_equal(back.value, ref.value)
    assert back.error_bound == ref.error_bound
    assert back.meta["method"] == "quadrature"
    assert back.meta["model"] == "bench1d"


def test_reference_fixture_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("# something else\nvalue=1.0\nerror_bound=0.1\n")
    with pytest.raises(ValueError):
        load_reference(path)


def test_checked_in_1d_fixture_matches_fresh_quadrature():
    from pathlib import Path
    fixture = Path(__file__).parent / "fixtures" / "bench1d_reference.txt"
    ref = load_reference(fixture)
    model, fn = model_from_id("bench1d")
    fresh = reference_mean_quadrature(model, fn, tol=1e-10)
    assert abs(ref.value[0] - fresh.value[0]) <= ref.error_bound + fresh.error_bound
    assert abs(ref.value[0] - fresh.value[0]) < 1e-12
