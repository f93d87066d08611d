"""Implausibility, shared-uncertainty estimation and NROY classification."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .emulator import OpeModel
from .functional_data import FunctionalCurve, GridSmoother
from .projection import ProjectionEnsemble, distances_to

UNIMODAL_THRESHOLD = 3.0
GENERAL_THRESHOLD = 5.0
KINDS = ("curve", "deriv")


class ImplausibilityError(ValueError):
    pass


@dataclass
class UncertaintyBudget:
    emu_var: np.ndarray
    shared_var: float

    def __post_init__(self):
        self.emu_var = np.asarray(self.emu_var, dtype=float)
        if np.any(self.emu_var < 0) or self.shared_var < 0:
            raise ImplausibilityError("variances must be nonnegative")


def implausibility(dist, budget: UncertaintyBudget, index=None):
    """dist / sqrt(emu_var + shared_var), for one candidate or all of them."""
    ev = budget.emu_var if index is None else budget.emu_var[index]
    total = np.asarray(ev, dtype=float) + budget.shared_var
    if np.any(total <= 0):
        raise ImplausibilityError("total variance is zero; implausibility undefined")
    out = np.asarray(dist, dtype=float) / np.sqrt(total)
    return float(out) if out.ndim == 0 else out


def threshold(mode: str = "general") -> float:
    """3 for unimodal predictive distributions, 5 (Chebyshev, k=5) otherwise."""
    if mode == "unimodal":
        return UNIMODAL_THRESHOLD
    if mode == "general":
        return GENERAL_THRESHOLD
    raise ImplausibilityError(f"unknown threshold mode {mode!r}")


def chebyshev_bound(k: float) -> float:
    return 1.0 / k ** 2


def default_delta_step(dists, threshold_value: float) -> float:
    """0.001 of the median squared standardized distance (dist/threshold)^2."""
    d = (np.asarray(dists, dtype=float) / threshold_value) ** 2
    scale = float(np.median(d))
    if scale <= 0:
        scale = float(np.mean(d))
    return 1e-3 * scale if scale > 0 else 1e-12


def fold_stopping_values(dists, emu_vars, k: int = 5, target_frac: float = 0.05,
                         delta_step: float | None = None,
                         threshold_value: float = GENERAL_THRESHOLD, seed: int = 0):
    """Per-fold stopping values a_j of the stepped uncertainty search.

    For each fold, a grows from 0 in steps of ``delta_step`` over the
    remaining folds until at least b = target_frac * n (k - 1) / k members
    have implausibility below the threshold.  Two-dimensional inputs (n, G)
    hold several components sharing one variance; a member then counts
    when its largest implausibility is below the threshold.  The stopping step is computed
    directly: candidate l is admitted once a > (dist_l / T)^2 - emu_var_l,
    so the loop stops at the first multiple of the step past the
    ceil(b)-th smallest such critical value.

    Returns (a_values, delta_step, folds).
    """
    dists = np.asarray(dists, dtype=float)
    emu_vars = np.asarray(emu_vars, dtype=float)
    if dists.ndim == 1:
        dists, emu_vars = dists[:, None], emu_vars.reshape(-1, 1)
    n = dists.shape[0]
    if emu_vars.shape != dists.shape:
        raise ImplausibilityError("dists and emu_vars must have equal length")
    if not (2 <= k <= n):
        raise ImplausibilityError("need 2 <= k <= n")
    if not 0 < target_frac < 1:
        raise ImplausibilityError("target fraction must lie in (0, 1)")
    if np.any(dists < 0) or np.any(emu_vars < 0):
        raise ImplausibilityError("distances and emulator variances must be nonnegative")
    b = target_frac * n * (k - 1) / k
    if b < 1:
        raise ImplausibilityError(f"target count b = {b:g} < 1; use more candidates")
    if delta_step is None:
        delta_step = default_delta_step(dists, threshold_value)
    if not delta_step > 0:
        raise ImplausibilityError("delta_step must be positive")
    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(n), k)
    need = int(math.ceil(b - 1e-9))
    a_values = np.empty(k)
    for j in range(k):
        rest = np.concatenate([folds[i] for i in range(k) if i != j])
        crit = np.sort(np.max((dists[rest] / threshold_value) ** 2 - emu_vars[rest], axis=1))
        c = crit[min(need, rest.size) - 1]
        steps = max(1, math.floor(c / delta_step) + 1) if c >= 0 else 1
        # guard against rounding at exact step boundaries
        while steps > 1 and _count(dists[rest], emu_vars[rest], (steps - 1) * delta_step,
                                   threshold_value) >= need:
            steps -= 1
        while _count(dists[rest], emu_vars[rest], steps * delta_step, threshold_value) < need:
            steps += 1
        a_values[j] = steps * delta_step
    return a_values, delta_step, folds


def _count(dist, ev, a, T):
    return int(np.sum(np.max(dist / np.sqrt(ev + a), axis=1) < T))


def estimate_shared_uncertainty(dists, emu_vars, k: int = 5, target_frac: float = 0.05,
                                delta_step: float | None = None,
                                threshold_value: float = GENERAL_THRESHOLD,
                                seed: int = 0) -> float:
    """Mean over k folds of the stopping uncertainty (shared variance)."""
    a_values, _, _ = fold_stopping_values(dists, emu_vars, k, target_frac, delta_step,
                                          threshold_value, seed)
    return float(np.mean(a_values))


def nroy_count(dists, emu_vars, a, threshold_value=GENERAL_THRESHOLD) -> int:
    d = np.asarray(dists, dtype=float)
    ev = np.asarray(emu_vars, dtype=float)
    if d.ndim == 1:
        d, ev = d[:, None], ev.reshape(-1, 1)
    return _count(d, ev, a, threshold_value)


# ---------------------------------------------------------------------------
# scoring candidates against observations
# ---------------------------------------------------------------------------

@dataclass
class ComponentScores:
    gauge: str
    kind: str
    dist: np.ndarray
    emu_var: np.ndarray

    @property
    def key(self) -> str:
        return f"{self.gauge}_{self.kind}"


class GaugeScorer:
    """Projected distances and emulator variances for one gauge.

    Emulated mean curves (and their derivatives) are formed by refitting
    grid predictions onto the spline basis, then projected on the shared
    ensemble.  The emulator variance of a component is the empirical
    variance, across posterior curve samples, of the distance statistic
    itself (mean absolute projected difference to the observation).
    """

    def __init__(self, gauge: str, model: OpeModel, observed: FunctionalCurve,
                 ensemble: ProjectionEnsemble, smoother: GridSmoother):
        if model.grid != ensemble.grid or smoother.grid != ensemble.grid:
            raise ImplausibilityError(f"gauge {gauge}: model, smoother and ensemble grids differ")
        self.gauge = gauge
        self.model = model
        self.ensemble = ensemble
        t = ensemble.grid.points
        self.proj_ops = {
            "curve": ensemble.weights @ smoother.smooth_matrix,
            "deriv": ensemble.weights @ smoother.slope_matrix,
        }
        self.obs_proj = {
            "curve": ensemble.project_values(observed(t)),
            "deriv": ensemble.project_values(observed.derivative()(t)),
        }

    def score(self, thetas, n_samples: int = 50, seed: int = 0, chunk: int = 100,
              workers: int = 1, kinds=KINDS) -> dict:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        n = thetas.shape[0]
        starts = list(range(0, n, chunk))

        def run(ci):
            lo = starts[ci]
            th = thetas[lo:lo + chunk]
            mean = self.model.predict_mean_values(th)
            rng = np.random.default_rng([seed, ci])
            draws = self.model.sample_values(th, n_samples, rng) if n_samples > 1 else None
            out = {}
            for kind in kinds:
                op = self.proj_ops[kind]
                d = distances_to(mean @ op.T, self.obs_proj[kind])
                if draws is None:
                    v = np.zeros(th.shape[0])
                else:
                    pj = draws @ op.T                     # (c, S, M)
                    ds = np.mean(np.abs(pj - self.obs_proj[kind]), axis=2)
                    v = np.var(ds, axis=1, ddof=1)
                out[kind] = (d, v)
            return out

        if workers > 1 and len(starts) > 1:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(run, range(len(starts))))
        else:
            parts = [run(i) for i in range(len(starts))]
        return {kind: ComponentScores(self.gauge, kind,
                                      np.concatenate([p[kind][0] for p in parts]),
                                      np.concatenate([p[kind][1] for p in parts]))
                for kind in kinds}


@dataclass
class ImplausibilityRecord:
    theta: np.ndarray
    components: dict
    combined: float
    nroy: bool


@dataclass
class ImplausibilityTable:
    """Implausibility of every candidate for every (gauge, kind) component."""

    candidates: np.ndarray
    values: dict                  # component key -> (n,) implausibility
    shared: dict                  # component key -> shared variance
    threshold: float
    param_names: tuple = ()
    order: list = field(default_factory=list)

    def __post_init__(self):
        if not self.order:
            self.order = list(self.values)

    def keys(self, gauges=None, kinds=None) -> list:
        out = []
        for key in self.order:
            g, kind = key.rsplit("_", 1)
            if (gauges is None or g in gauges) and (kinds is None or kind in kinds):
                out.append(key)
        return out

    def combined(self, gauges=None, kinds=None) -> np.ndarray:
        keys = self.keys(gauges, kinds)
        if not keys:
            raise ImplausibilityError("no components selected")
        return np.max(np.stack([self.values[k] for k in keys]), axis=0)

    def nroy(self, gauges=None, kinds=None) -> np.ndarray:
        return self.combined(gauges, kinds) < self.threshold

    def records(self, gauges=None, kinds=None):
        comb = self.combined(gauges, kinds)
        keys = self.keys(gauges, kinds)
        for i in range(self.candidates.shape[0]):
            yield ImplausibilityRecord(self.candidates[i],
                                       {k: float(self.values[k][i]) for k in keys},
                                       float(comb[i]), bool(comb[i] < self.threshold))

    def write_csv(self, path, comment: str | None = None) -> None:
        names = list(self.param_names) or [f"theta{i + 1}"
                                           for i in range(self.candidates.shape[1])]
        comb = self.combined()
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(["candidate_id", *names, *[f"I_{k}" for k in self.order],
                        "I_max", "nroy"])
            for i in range(self.candidates.shape[0]):
                w.writerow([i, *[repr(float(v)) for v in self.candidates[i]],
                            *[repr(float(self.values[k][i])) for k in self.order],
                            repr(float(comb[i])), int(comb[i] < self.threshold)])


def estimate_shared(scores: dict, pooling: str = "kind", k_folds: int = 5,
                    target_frac: float = 0.05, threshold_value: float = GENERAL_THRESHOLD,
                    seed: int = 0, fixed: dict | None = None) -> dict:
    """Shared variances for every component in ``scores`` (key -> ComponentScores).

    ``pooling="kind"`` estimates one value per data kind from the maximum
    implausibility over gauges; ``pooling="component"`` estimates each
    (gauge, kind) pair on its own.  Keys present in ``fixed`` are kept.
    """
    fixed = dict(fixed or {})
    out = {}
    if pooling == "component":
        for key, sc in scores.items():
            out[key] = fixed[key] if key in fixed else estimate_shared_uncertainty(
                sc.dist, sc.emu_var, k_folds, target_frac, None, threshold_value, seed)
        return out
    if pooling != "kind":
        raise ImplausibilityError(f"unknown pooling {pooling!r}")
    kinds = []
    for sc in scores.values():
        if sc.kind not in kinds:
            kinds.append(sc.kind)
    for kind in kinds:
        members = [key for key, sc in scores.items() if sc.kind == kind]
        todo = [key for key in members if key not in fixed]
        for key in members:
            if key in fixed:
                out[key] = float(fixed[key])
        if not todo:
            continue
        d = np.stack([scores[key].dist for key in todo], axis=1)
        ev = np.stack([scores[key].emu_var for key in todo], axis=1)
        a = estimate_shared_uncertainty(d, ev, k_folds, target_frac, None, threshold_value, seed)
        for key in todo:
            out[key] = a
    return out


def score_all(candidates, observations: dict, models: dict, ensemble: ProjectionEnsemble,
              smoother: GridSmoother, gauges=None, kinds=KINDS, n_samples: int = 50,
              seed: int = 0, workers: int = 1) -> dict:
    """ComponentScores for every (gauge, kind), keyed "<gauge>_<kind>"."""
    gauges = list(gauges if gauges is not None else observations)
    for g in gauges:
        if g not in observations:
            raise ImplausibilityError(f"no observation for gauge {g}")
        if g not in models:
            raise ImplausibilityError(f"no trained model for gauge {g}")
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    out = {}
    for gi, g in enumerate(gauges):
        scorer = GaugeScorer(g, models[g], observations[g], ensemble, smoother)
        scores = scorer.score(candidates, n_samples, seed=seed + 7919 * gi, workers=workers,
                              kinds=kinds)
        for kind in kinds:
            out[scores[kind].key] = scores[kind]
    return out


def table_from_scores(candidates, scores: dict, shared: dict,
                      threshold_value: float = GENERAL_THRESHOLD,
                      param_names=()) -> ImplausibilityTable:
    values = {}
    for key, sc in scores.items():
        if key not in shared:
            raise ImplausibilityError(f"no shared uncertainty for component {key}")
        values[key] = implausibility(sc.dist, UncertaintyBudget(sc.emu_var, shared[key]))
    return ImplausibilityTable(np.atleast_2d(np.asarray(candidates, dtype=float)), values,
                               {k: float(shared[k]) for k in scores}, threshold_value,
                               tuple(param_names), list(scores))


def classify(candidates, observations: dict, models: dict, ensemble: ProjectionEnsemble,
             smoother: GridSmoother, threshold_value: float = GENERAL_THRESHOLD,
             shared: dict | None = None, gauges=None, kinds=KINDS, n_samples: int = 50,
             k_folds: int = 5, target_frac: float = 0.05, seed: int = 0,
             workers: int = 1, param_names=(), pooling: str = "kind",
             scores_out: dict | None = None) -> ImplausibilityTable:
    """Score candidates at every gauge and classify them as NROY or implausible.

    ``shared`` maps component keys ("<gauge>_<kind>") to fixed shared
    variances; components without an entry are estimated from the candidate
    scores (see ``estimate_shared``).
    """
    scores = score_all(candidates, observations, models, ensemble, smoother, gauges, kinds,
                       n_samples, seed, workers)
    if scores_out is not None:
        scores_out.update(scores)
    used = estimate_shared(scores, pooling, k_folds, target_frac, threshold_value, seed, shared)
    return table_from_scores(candidates, scores, used, threshold_value, param_names)
