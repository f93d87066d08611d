import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.interpolate import BSpline

from fhm.functional_data import (BSplineBasis, FunctionalCurve, FunctionalDataError,
                                 GridSmoother, TimeGrid, differentiate, evaluate, fit_curve,
                                 fit_operator, fit_values, read_series_csv, rescale_times,
                                 write_series_csv)

T = np.linspace(0, 1, 240)


def test_time_grid_validation():
    with pytest.raises(FunctionalDataError):
        TimeGrid([0.0, 0.5, 0.4])
    with pytest.raises(FunctionalDataError):
        TimeGrid([0.0, 1.5])
    g = TimeGrid.uniform(5)
    assert g.count == 5
    assert np.isclose(g.trapezoid_weights().sum(), 1.0)


def test_default_basis():
    b = BSplineBasis.uniform()
    assert b.order == 4 and b.n_basis == 29


def test_constant_fit_exact():
    c = fit_values(T, np.full(T.size, 3.0), penalty=0.0)
    assert np.max(np.abs(c(np.linspace(0, 1, 1001)) - 3.0)) < 1e-10
    assert abs(float(evaluate(c, [0.5])[0]) - 3.0) < 1e-10


def test_cubic_reproduced():
    f = lambda t: 1 - 2 * t + 3 * t ** 2 - 4 * t ** 3
    c = fit_values(T, f(T), penalty=0.0)
    tt = np.linspace(0, 1, 777)
    assert np.max(np.abs(c(tt) - f(tt))) < 1e-8


def test_noisy_sine_matches_dense_oracle():
    rng = np.random.default_rng(3)
    t = np.sort(rng.random(200))
    y = np.sin(2 * np.pi * t) + 0.05 * rng.standard_normal(200)
    basis = BSplineBasis.uniform(n_interior=16)          # 20 basis functions
    assert basis.n_basis == 20
    c = fit_curve(np.column_stack([t, y]), basis, 1e-4)
    # oracle: augmented least squares with an independently assembled penalty
    knots = basis.full_knots
    B = np.column_stack([BSpline(knots, np.eye(20)[j], 3)(t) for j in range(20)])
    # second derivatives are piecewise linear: 3-point Gauss rule per knot span is exact
    x3, w3 = np.polynomial.legendre.leggauss(3)
    edges = np.unique(knots)
    xq = np.concatenate([(a + b) / 2 + (b - a) / 2 * x3 for a, b in zip(edges[:-1], edges[1:])])
    wq = np.concatenate([(b - a) / 2 * w3 for a, b in zip(edges[:-1], edges[1:])])
    D2 = np.column_stack([BSpline(knots, np.eye(20)[j], 3).derivative(2)(xq) for j in range(20)])
    R = D2.T @ (wq[:, None] * D2)
    w, V = np.linalg.eigh(R)
    Rh = (V * np.sqrt(np.clip(w, 0, None))).T
    A = np.vstack([B, np.sqrt(1e-4) * Rh])
    coef = np.linalg.lstsq(A, np.concatenate([y, np.zeros(20)]), rcond=None)[0]
    assert np.allclose(c.coefficients, coef, atol=1e-8)
    tt = np.linspace(0, 1, 1001)
    assert np.sqrt(np.mean((c(tt) - np.sin(2 * np.pi * tt)) ** 2)) < 0.05


def test_fit_errors():
    with pytest.raises(FunctionalDataError, match="underdetermined"):
        fit_values(np.linspace(0, 1, 10), np.zeros(10))
    with pytest.raises(FunctionalDataError, match="singular"):
        # all samples in one knot span leave most basis functions unconstrained
        fit_values(np.full(40, 0.5), np.zeros(40), penalty=0.0)


def test_evaluate_rejects_outside_times():
    c = FunctionalCurve(BSplineBasis.uniform(), np.zeros(29))
    assert np.all(c(np.linspace(0, 1, 9)) == 0)
    with pytest.raises(FunctionalDataError):
        evaluate(c, [1.2])
    with pytest.raises(FunctionalDataError):
        evaluate(c, [-0.01])


def test_linear_curve():
    c = fit_values(T, 2 * T, penalty=0.0)
    assert abs(float(c([0.25])[0]) - 0.5) < 1e-8
    d = differentiate(c)
    assert np.max(np.abs(d(np.linspace(0, 1, 101)) - 2.0)) < 1e-10
    z = differentiate(fit_values(T, np.full(T.size, 4.0), penalty=0.0))
    assert np.max(np.abs(z(T))) < 1e-10


def test_sine_derivative_vs_finite_difference():
    c = fit_values(T, np.sin(2 * np.pi * T))
    d0 = float(c.derivative()([0.0])[0])
    fd = (float(c([1e-5])[0]) - float(c([0.0])[0])) / 1e-5
    assert abs(d0 - fd) / abs(fd) < 1e-3
    assert abs(d0 - 2 * np.pi) / (2 * np.pi) < 0.02


def test_differentiate_requires_order_three():
    c = FunctionalCurve(BSplineBasis.uniform(5, order=2), np.zeros(7))
    with pytest.raises(FunctionalDataError):
        differentiate(c)


def test_smoother_matches_fit():
    sm = GridSmoother(TimeGrid(T))
    y = np.cos(3 * T) + T ** 2
    c = fit_values(T, y)
    assert np.allclose(sm.smooth(y), c(T), atol=1e-12)
    assert np.allclose(sm.slope(y), c.derivative()(T), atol=1e-10)
    assert np.allclose(sm.smooth(np.stack([y, 2 * y])), np.stack([c(T), 2 * c(T)]))


def test_csv_roundtrip(tmp_path):
    t = np.linspace(10, 70, 50)
    v = np.sin(t / 5)
    write_series_csv(tmp_path / "g.csv", t, v, comment="seed=1")
    t2, v2 = read_series_csv(tmp_path / "g.csv")
    assert np.array_equal(t, t2) and np.array_equal(v, v2)
    u, interval = rescale_times(t2)
    assert u[0] == 0 and u[-1] == 1 and interval == (10.0, 70.0)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(FunctionalDataError):
        read_series_csv(tmp_path / "bad.csv")


poly = st.lists(st.floats(-5, 5), min_size=1, max_size=4)


@settings(max_examples=30, deadline=None)
@given(poly)
def test_derivative_of_polynomial_fit(coefs):
    p = np.polynomial.Polynomial(coefs)
    c = fit_values(T, p(T), penalty=0.0)
    tt = np.linspace(0, 1, 301)
    assert np.max(np.abs(c.derivative()(tt) - p.deriv()(tt))) < 1e-8


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 31))
def test_fit_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    f, g = rng.standard_normal(T.size), rng.standard_normal(T.size)
    F = fit_operator(BSplineBasis.uniform(), T, 1e-6)
    assert np.allclose(F @ (a * f + b * g), a * (F @ f) + b * (F @ g), atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_derivative_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    c = FunctionalCurve(BSplineBasis.uniform(), rng.standard_normal(29))
    t = np.linspace(0.05, 0.95, 19)
    h = 1e-5
    fd = (c(t + h) - c(t - h)) / (2 * h)
    d = c.derivative()(t)
    assert np.all(np.abs(d - fd) <= 1e-4 * np.maximum(np.abs(d), 1.0))
