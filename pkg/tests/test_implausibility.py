import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fhm.implausibility import (ComponentScores, GaugeScorer, ImplausibilityError,
                                UncertaintyBudget, chebyshev_bound, classify,
                                default_delta_step, estimate_shared,
                                estimate_shared_uncertainty, fold_stopping_values,
                                implausibility, nroy_count, table_from_scores, threshold)
from fhm.projection import generate

from oracles import scan_shared_uncertainty


def test_plug_in_value():
    assert implausibility(5.0, UncertaintyBudget(np.array(0.5), 0.5)) == 5.0
    assert implausibility(10.0, UncertaintyBudget(np.array(3.0), 1.0)) == 5.0
    b = UncertaintyBudget(np.array([1.0, 3.0]), 1.0)
    assert np.allclose(implausibility([2.0, 4.0], b), [math.sqrt(2), 2.0])
    assert implausibility(4.0, b, index=1) == 2.0


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_homogeneity(d, ev, a):
    base = implausibility(d, UncertaintyBudget(np.array(ev), a))
    assert implausibility(2 * d, UncertaintyBudget(np.array(ev), a)) == pytest.approx(2 * base)
    assert implausibility(d, UncertaintyBudget(np.array(4 * ev), 4 * a)) == pytest.approx(base / 2)
    assert implausibility(d, UncertaintyBudget(np.array(2 * ev), 2 * a)) == pytest.approx(
        base / math.sqrt(2))


def test_zero_variance_and_negative_rejected():
    with pytest.raises(ImplausibilityError, match="zero"):
        implausibility(1.0, UncertaintyBudget(np.array(0.0), 0.0))
    with pytest.raises(ImplausibilityError):
        UncertaintyBudget(np.array([-1.0]), 0.0)


def test_thresholds():
    assert threshold("general") == 5.0 and threshold("unimodal") == 3.0
    assert chebyshev_bound(5.0) == pytest.approx(0.04)
    with pytest.raises(ImplausibilityError):
        threshold("other")


def test_chebyshev_holds_for_a_bimodal_mixture():
    rng = np.random.default_rng(0)
    n = 400_000
    comp = rng.random(n) < 0.5
    x = np.where(comp, rng.normal(-3, 0.5, n), rng.normal(3, 0.5, n))
    z = (x - x.mean()) / x.std()
    assert np.mean(np.abs(z) >= 5) <= chebyshev_bound(5)
    assert np.mean(np.abs(z) >= 3) <= chebyshev_bound(3)


def test_default_delta_step():
    d = np.array([5.0, 10.0, 15.0])
    assert default_delta_step(d, 5.0) == pytest.approx(1e-3 * 4.0)
    assert default_delta_step(np.zeros(4), 5.0) > 0


def test_all_zero_distances_stop_at_first_step():
    a, delta, _ = fold_stopping_values(np.zeros(100), np.zeros(100), delta_step=0.01)
    assert np.allclose(a, 0.01) and delta == 0.01


def test_small_n_rejected():
    with pytest.raises(ImplausibilityError, match="b ="):
        fold_stopping_values(np.ones(20), np.ones(20))
    with pytest.raises(ImplausibilityError):
        fold_stopping_values(np.ones(100), np.ones(99))
    with pytest.raises(ImplausibilityError):
        fold_stopping_values(np.ones(100), np.ones(100), k=1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 3), st.integers(100, 400))
def test_matches_literal_loop(seed, n_comp, n):
    rng = np.random.default_rng(seed)
    d = rng.gamma(2.0, 1.0, (n, n_comp))
    ev = rng.gamma(1.0, 0.05, (n, n_comp))
    if n_comp == 1:
        d, ev = d[:, 0], ev[:, 0]
    a_vals, delta, folds = fold_stopping_values(d, ev, k=5, seed=seed)
    b = 0.05 * n * 4 / 5
    for j in range(5):
        rest = np.concatenate([folds[i] for i in range(5) if i != j])
        ref = scan_shared_uncertainty(d, ev, rest, math.ceil(b - 1e-9), delta, 5.0)
        assert abs(a_vals[j] - ref) <= delta * (1 + 1e-9)
    assert estimate_shared_uncertainty(d, ev, k=5, seed=seed) == pytest.approx(a_vals.mean())


def test_nroy_monotone_in_shared_variance():
    rng = np.random.default_rng(2)
    d, ev = rng.gamma(2, 1, 500), rng.gamma(1, 0.1, 500)
    counts = [nroy_count(d, ev, a) for a in np.geomspace(1e-4, 10, 30)]
    assert all(x <= y for x, y in zip(counts, counts[1:]))


def scores_for(rng, gauges, n=300):
    out = {}
    for g in gauges:
        for kind in ("curve", "deriv"):
            out[f"{g}_{kind}"] = ComponentScores(g, kind, rng.gamma(2, 1, n),
                                                 rng.gamma(1, 0.05, n))
    return out


def test_pooled_shared_variance_is_gauge_order_invariant():
    rng = np.random.default_rng(5)
    sc = scores_for(rng, ["A", "B", "C"])
    a = estimate_shared(sc)
    rev = estimate_shared(dict(reversed(list(sc.items()))))
    assert a == rev
    assert a["A_curve"] == a["C_curve"] and a["A_deriv"] == a["B_deriv"]
    comp = estimate_shared(sc, pooling="component")
    assert len(set(comp.values())) > 2
    fixed = estimate_shared(sc, fixed={"A_curve": 7.0})
    assert fixed["A_curve"] == 7.0
    with pytest.raises(ImplausibilityError):
        estimate_shared(sc, pooling="other")


def test_larger_distances_need_more_shared_variance():
    rng = np.random.default_rng(6)
    d, ev = rng.gamma(2, 1, 400), rng.gamma(1, 1e-4, 400)
    a1 = estimate_shared_uncertainty(d, ev, delta_step=1e-3)
    a2 = estimate_shared_uncertainty(2 * d, ev, delta_step=1e-3)
    assert a2 > a1


def test_threshold_extremes():
    rng = np.random.default_rng(8)
    sc = scores_for(rng, ["A"], 200)
    cand = rng.random((200, 2))
    shared = {k: 0.1 for k in sc}
    assert table_from_scores(cand, sc, shared, math.inf).nroy().all()
    assert not table_from_scores(cand, sc, shared, 0.0).nroy().any()
    tab = table_from_scores(cand, sc, shared, 5.0)
    assert tab.keys(kinds=["curve"]) == ["A_curve"]
    assert np.all(tab.nroy() <= tab.nroy(kinds=["curve"]))
    with pytest.raises(ImplausibilityError):
        table_from_scores(cand, sc, {"A_curve": 0.1})


def test_observation_equal_to_emulator_mean_scores_zero(small_twin, scenario):
    m = small_twin["models"]["DART1"]
    sm = scenario.smoother()
    theta = m.space.midpoint[None, :]
    obs = sm.curve(m.predict_mean_values(theta)[0])
    ens = generate(scenario.grid, 200, seed=1)
    sc = GaugeScorer("DART1", m, obs, ens, sm).score(theta, n_samples=20)
    assert sc["curve"].dist[0] < 1e-10 and sc["deriv"].dist[0] < 1e-8
    assert sc["curve"].emu_var[0] > 0


def test_classify_end_to_end(small_twin, scenario, space):
    from fhm.design_space import latin_hypercube
    cand = latin_hypercube(space, 300, seed=3).points
    cand = np.vstack([cand, small_twin["truth"]])
    ens = generate(scenario.grid, 200, seed=2)
    tab = classify(cand, {g: small_twin["obs"][g] for g in small_twin["gauges"]},
                   small_twin["models"], ens, scenario.smoother(), n_samples=20,
                   param_names=space.names)
    assert set(tab.shared) == {"DART1_curve", "DART1_deriv", "DART2_curve", "DART2_deriv"}
    assert tab.nroy()[-1]
    frac = tab.nroy()[:-1].mean()
    assert 0.0 < frac < 0.5
    # adding a gauge can only remove candidates at fixed shared variances
    assert np.all(tab.nroy() <= tab.nroy(gauges=["DART1"]))
