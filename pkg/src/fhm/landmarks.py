"""Landmark-based history matching: the scalar-feature baseline.

Each curve is summarised by four landmarks, its maximum and minimum values
and the (normalized) times at which they occur.  Candidates are screened
one landmark at a time with a 3-sigma threshold.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .emulator import OpeModel
from .functional_data import FunctionalCurve, GridSmoother, TimeGrid
from .implausibility import (UNIMODAL_THRESHOLD, ComponentScores, ImplausibilityError,
                             ImplausibilityTable, estimate_shared, table_from_scores)

LANDMARKS = ("lmax", "lmin", "tmax", "tmin")


@dataclass(frozen=True)
class LandmarkVector:
    max_value: float
    min_value: float
    t_max: float
    t_min: float

    def __post_init__(self):
        if self.max_value < self.min_value:
            raise ValueError("max_value must be at least min_value")
        if not (0.0 <= self.t_max <= 1.0 and 0.0 <= self.t_min <= 1.0):
            raise ValueError("landmark times must lie in [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.max_value, self.min_value, self.t_max, self.t_min])


def _refine(f, t, i, sign):
    """Local bounded search for an extremum of sign * f around t[i]."""
    lo = t[max(i - 1, 0)]
    hi = t[min(i + 1, t.size - 1)]
    best_t, best_v = float(t[i]), float(f(t[i]))
    if hi <= lo:
        return best_t, best_v
    res = minimize_scalar(lambda x: -sign * f(x), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    v = float(f(res.x))
    # only move off the grid point on a strict improvement, so ties stay put
    if sign * (v - best_v) > 1e-14 * max(1.0, abs(best_v)):
        return float(res.x), v
    return best_t, best_v


def extract_landmarks(curve: FunctionalCurve, grid: TimeGrid | None = None) -> LandmarkVector:
    """Global max/min of the curve and where they occur.

    Extrema are located on ``grid`` (2001 uniform points by default; the
    first occurrence wins on ties, up to rounding) and then refined by a bounded search on
    the spline between the neighbouring grid points.
    """
    grid = grid or TimeGrid.uniform(2001)
    t = grid.points
    v = curve(t)
    scalar = lambda x: float(curve(np.atleast_1d(x))[0])
    tol = 1e-12 * max(1.0, float(np.max(np.abs(v))))
    # values within rounding of the extremum count as ties
    i_max = int(np.argmax(v >= v.max() - tol))
    i_min = int(np.argmax(v <= v.min() + tol))
    t_max, v_max = _refine(scalar, t, i_max, 1.0)
    t_min, v_min = _refine(scalar, t, i_min, -1.0)
    return LandmarkVector(v_max, min(v_min, v_max), t_max, t_min)


def _vertex(t, y, i):
    """Parabolic vertex through (t, y) at i-1, i, i+1, with array indices i."""
    n = t.size
    j = np.clip(i, 1, n - 2)
    x0, x1, x2 = t[j - 1], t[j], t[j + 1]
    y0 = np.take_along_axis(y, (j - 1)[..., None], -1)[..., 0]
    y1 = np.take_along_axis(y, j[..., None], -1)[..., 0]
    y2 = np.take_along_axis(y, (j + 1)[..., None], -1)[..., 0]
    num = (x1 - x0) ** 2 * (y1 - y2) - (x1 - x2) ** 2 * (y1 - y0)
    den = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0)
    ok = (i == j) & (np.abs(den) > 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = np.where(ok, x1 - 0.5 * num / np.where(ok, den, 1.0), x1)
    xs = np.clip(xs, x0, x2)
    # value of the interpolating parabola (Lagrange form)
    with np.errstate(divide="ignore", invalid="ignore"):
        l0 = (xs - x1) * (xs - x2) / ((x0 - x1) * (x0 - x2))
        l1 = (xs - x0) * (xs - x2) / ((x1 - x0) * (x1 - x2))
        l2 = (xs - x0) * (xs - x1) / ((x2 - x0) * (x2 - x1))
    ys = np.where(ok, l0 * y0 + l1 * y1 + l2 * y2, np.take_along_axis(y, i[..., None], -1)[..., 0])
    xs = np.where(ok, xs, t[i])
    return xs, ys


def landmarks_from_values(values, grid: TimeGrid) -> np.ndarray:
    """Landmarks of many grid-sampled curves at once; (..., q) -> (..., 4).

    Discrete extrema are refined by the vertex of the parabola through the
    neighbouring grid values.  Columns follow ``LANDMARKS``.
    """
    y = np.asarray(values, dtype=float)
    t = grid.points
    if y.shape[-1] != t.size:
        raise ValueError("values do not match the grid")
    if t.size < 3:
        i_max, i_min = np.argmax(y, -1), np.argmin(y, -1)
        vmax = np.take_along_axis(y, i_max[..., None], -1)[..., 0]
        vmin = np.take_along_axis(y, i_min[..., None], -1)[..., 0]
        return np.stack([vmax, vmin, t[i_max], t[i_min]], axis=-1)
    tmax, vmax = _vertex(t, y, np.argmax(y, axis=-1))
    tmin, vmin = _vertex(t, -y, np.argmin(y, axis=-1))
    return np.stack([vmax, -vmin, tmax, tmin], axis=-1)


class LandmarkScorer:
    """Landmark errors and emulator variances for one gauge.

    Expectations and variances of each landmark come from posterior curve
    samples (smoothed onto the spline basis like the functional path).
    """

    def __init__(self, gauge: str, model: OpeModel, observed: FunctionalCurve,
                 smoother: GridSmoother):
        if model.grid != smoother.grid:
            raise ImplausibilityError(f"gauge {gauge}: model and smoother grids differ")
        self.gauge = gauge
        self.model = model
        self.smoother = smoother
        self.observed = extract_landmarks(observed)

    def score(self, thetas, n_samples: int = 50, seed: int = 0, chunk: int = 100,
              workers: int = 1) -> dict:
        if n_samples < 2:
            raise ImplausibilityError("landmark variances need at least 2 samples")
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        starts = list(range(0, thetas.shape[0], chunk))
        z = self.observed.as_array()
        S = self.smoother.smooth_matrix

        def run(ci):
            th = thetas[starts[ci]:starts[ci] + chunk]
            rng = np.random.default_rng([seed, ci])
            draws = self.model.sample_values(th, n_samples, rng) @ S.T
            lm = landmarks_from_values(draws, self.smoother.grid)     # (c, S, 4)
            return np.abs(z - lm.mean(axis=1)), lm.var(axis=1, ddof=1)

        if workers > 1 and len(starts) > 1:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(run, range(len(starts))))
        else:
            parts = [run(i) for i in range(len(starts))]
        err = np.concatenate([p[0] for p in parts])
        var = np.concatenate([p[1] for p in parts])
        return {name: ComponentScores(self.gauge, name, err[:, j], var[:, j])
                for j, name in enumerate(LANDMARKS)}


def landmark_scores(candidates, observations: dict, models: dict, smoother: GridSmoother,
                    gauges=None, n_samples: int = 50, seed: int = 0, workers: int = 1) -> dict:
    gauges = list(gauges if gauges is not None else observations)
    out = {}
    for gi, g in enumerate(gauges):
        if g not in observations:
            raise ImplausibilityError(f"no observation for gauge {g}")
        if g not in models:
            raise ImplausibilityError(f"no trained model for gauge {g}")
        sc = LandmarkScorer(g, models[g], observations[g], smoother).score(
            candidates, n_samples, seed + 7919 * gi, workers=workers)
        for s in sc.values():
            out[s.key] = s
    return out


def landmark_classify(candidates, observations: dict, models: dict, smoother: GridSmoother,
                      threshold_value: float = UNIMODAL_THRESHOLD, gauges=None,
                      n_samples: int = 50, k_folds: int = 5, target_frac: float = 0.05,
                      seed: int = 0, workers: int = 1, param_names=(),
                      pooling: str = "kind", shared: dict | None = None) -> ImplausibilityTable:
    """NROY classification on the four landmarks of every gauge.

    A candidate survives only if every landmark at every gauge has
    implausibility below ``threshold_value``.  Shared variances are found
    with the same stepped fold search as the functional method, applied to
    absolute landmark errors.
    """
    scores = landmark_scores(candidates, observations, models, smoother, gauges, n_samples,
                             seed, workers)
    used = estimate_shared(scores, pooling, k_folds, target_frac, threshold_value, seed, shared)
    return table_from_scores(candidates, scores, used, threshold_value, param_names)
