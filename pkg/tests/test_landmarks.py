import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fhm.functional_data import TimeGrid, fit_values
from fhm.landmarks import (LANDMARKS, LandmarkScorer, LandmarkVector, extract_landmarks,
                           landmark_classify, landmarks_from_values)
from fhm.simulator import SourceParams, simulate

from oracles import dense_scan_extrema

T = np.linspace(0, 1, 240)
# DART1 at the reference source; extrema of the fitted spline on a dense
# 10^5-point scan (independent of the package's refinement)
REF_MAX, REF_TMAX = 0.8000658873368991, 0.59381
REF_MIN, REF_TMIN = -0.7999847818761098, 0.40228


def test_sine_landmarks():
    c = fit_values(T, np.sin(2 * np.pi * T))
    lm = extract_landmarks(c)
    assert lm.max_value == pytest.approx(1.0, abs=1e-4)
    assert lm.min_value == pytest.approx(-1.0, abs=1e-4)
    assert lm.t_max == pytest.approx(0.25, abs=1e-3)
    assert lm.t_min == pytest.approx(0.75, abs=1e-3)


def test_constant_curve_ties_at_start():
    lm = extract_landmarks(fit_values(T, np.full(T.size, 2.0), penalty=0.0))
    assert lm.t_max == 0.0 and lm.t_min == 0.0
    assert lm.max_value == pytest.approx(2.0) and lm.min_value == pytest.approx(2.0)


def test_reference_curve_against_dense_scan(scenario):
    c = simulate(SourceParams.from_vector(scenario.truth), scenario.gauge("DART1"), scenario.grid, scenario.wave_speed,
                 scenario.smoother())
    vmax, tmax, vmin, tmin = dense_scan_extrema(c)
    assert abs(vmax - REF_MAX) < 1e-9 and abs(tmax - REF_TMAX) < 1e-9
    lm = extract_landmarks(c)
    assert abs(lm.max_value - REF_MAX) < 1e-4 and abs(lm.t_max - REF_TMAX) < 1e-4
    assert abs(lm.min_value - REF_MIN) < 1e-4 and abs(lm.t_min - REF_TMIN) < 1e-4
    assert lm.max_value >= vmax - 1e-12 and lm.min_value <= vmin + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10), st.integers(0, 2 ** 31))
def test_scaling(alpha, seed):
    rng = np.random.default_rng(seed)
    y = np.cumsum(rng.standard_normal(T.size)) / 10
    a = extract_landmarks(fit_values(T, y)).as_array()
    b = extract_landmarks(fit_values(T, alpha * y)).as_array()
    assert np.allclose(b[:2], alpha * a[:2], rtol=1e-6, atol=1e-12)
    assert np.allclose(b[2:], a[2:], atol=1e-6)


def test_vector_validation():
    with pytest.raises(ValueError):
        LandmarkVector(0.0, 1.0, 0.5, 0.5)
    with pytest.raises(ValueError):
        LandmarkVector(1.0, 0.0, 1.5, 0.5)


def test_values_route_agrees_with_curve_route(scenario):
    sm = scenario.smoother()
    c = simulate(SourceParams.from_vector(scenario.truth), scenario.gauge("DART2"), scenario.grid, scenario.wave_speed, sm)
    grid_lm = landmarks_from_values(c(scenario.grid.points), scenario.grid)
    ref = extract_landmarks(c).as_array()
    assert np.allclose(grid_lm[:2], ref[:2], atol=2e-4)
    assert np.allclose(grid_lm[2:], ref[2:], atol=2e-3)
    stacked = landmarks_from_values(np.stack([c(scenario.grid.points)] * 3), scenario.grid)
    assert stacked.shape == (3, 4) and np.allclose(stacked, grid_lm)
    with pytest.raises(ValueError):
        landmarks_from_values(np.zeros(7), scenario.grid)


def test_parabolic_vertex_exact_for_quadratics():
    grid = TimeGrid.uniform(21)
    y = -(grid.points - 0.4321) ** 2 + 1
    lm = landmarks_from_values(y, grid)
    assert lm[0] == pytest.approx(1.0, abs=1e-14) and lm[2] == pytest.approx(0.4321, abs=1e-12)


def test_scorer_at_emulator_mean(small_twin, scenario):
    m = small_twin["models"]["DART1"]
    sm = scenario.smoother()
    theta = m.design[:1]
    obs = sm.curve(m.predict_mean_values(theta)[0])
    sc = LandmarkScorer("DART1", m, obs, sm).score(theta, n_samples=20)
    assert set(sc) == set(LANDMARKS)
    # at a training point the draws collapse on the observed curve
    for name in LANDMARKS:
        assert sc[name].dist[0] < 1e-3 and sc[name].emu_var[0] >= 0


def test_landmark_classify_keeps_truth(small_twin, scenario, space):
    from fhm.design_space import latin_hypercube
    cand = np.vstack([latin_hypercube(space, 200, seed=4).points, small_twin["truth"]])
    tab = landmark_classify(cand, {g: small_twin["obs"][g] for g in small_twin["gauges"]},
                            small_twin["models"], scenario.smoother(), n_samples=20)
    assert tab.threshold == 3.0
    assert len(tab.order) == 8
    assert tab.nroy()[-1]
