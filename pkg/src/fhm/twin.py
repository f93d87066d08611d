"""End-to-end twin experiment: observations generated at a known source.

Functional and landmark history matching are run side by side.  Both use
the same wave-1 simulations and emulators; later waves of each method
are designed inside that method's own NROY box.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .design_space import ParameterSpace
from .reporting import envelope_area, envelope_coverage, functional_boxplot
from .simulator import Scenario, default_scenario, default_space
from .waves import (Timings, WaveConfig, WaveResult, forecast_values, next_space, observe,
                    point_implausibility, run_wave)

log = logging.getLogger(__name__)


@dataclass
class TwinSettings:
    seed: int = 2024
    n_waves: int = 2
    design_size: int = 100
    n_candidates: int = 10_000
    n_projections: int = 1000
    n_samples: int = 50
    k_folds: int = 5
    target_frac: float = 0.05
    threshold_mode: str = "general"
    observe: tuple = ()
    target: str = ""
    landmarks: bool = True

    def wave_config(self, wave: int, method: str = "functional", gauges=(), targets=()):
        return WaveConfig.seeded(wave, self.seed, n_candidates=self.n_candidates,
                                 design_size=self.design_size, gauges=tuple(gauges),
                                 targets=tuple(targets), threshold_mode=self.threshold_mode,
                                 n_projections=self.n_projections, n_samples=self.n_samples,
                                 k_folds=self.k_folds, target_frac=self.target_frac,
                                 method=method)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["observe"] = list(self.observe)
        return d


@dataclass
class TwinReport:
    settings: TwinSettings
    truth: np.ndarray
    observe: list
    target: str
    functional: list
    landmark: list = field(default_factory=list)
    truth_implausibility: dict = field(default_factory=dict)
    forecasts: dict = field(default_factory=dict)
    truth_curve: np.ndarray | None = None

    def checks(self) -> dict:
        """Pass/fail booleans of the twin-experiment acceptance checks."""
        out = {}
        fr = self.functional
        out["truth_in_nroy"] = all(self.truth_implausibility[f"functional_{r.wave}"] <
                                   r.table.threshold for r in fr)
        boxes_ok = True
        outer = fr[0].space
        for r in fr:
            if not r.space.is_subset_of(outer, tol=1e-9) or r.all_ruled_out:
                boxes_ok = False
                break
            outer = r.space
        if boxes_ok and not fr[-1].all_ruled_out:
            boxes_ok = next_space(fr[-1]).is_subset_of(fr[-1].space, tol=1e-9)
        out["boxes_nested"] = boxes_ok
        fracs = [r.counts()["nroy_fraction"] for r in fr]
        out["nroy_fraction_in_range"] = all(0.01 <= f <= 0.15 for f in fracs)
        out["derivative_filter_shrinks"] = all(
            r.counts()["nroy"] <= r.counts()["nroy_curve_only"] for r in fr)
        virt = [g for g in self.observe if g.startswith("VIRT")]
        if virt:
            out["virtual_gauge_shrinks"] = all(
                r.counts()["nroy"] <= r.counts()[f"nroy_without_{virt[0]}"] for r in fr)
        if "functional" in self.forecasts and "landmark" in self.forecasts:
            f, lm = self.forecasts["functional"], self.forecasts["landmark"]
            out["envelope_ratio_below_one"] = (f["area"] / lm["area"] < 1.0
                                               if lm["area"] > 0 else False)
            out["truth_coverage_95"] = f["coverage"] >= 0.95
        if self.landmark:
            out["truth_in_landmark_nroy"] = all(
                self.truth_implausibility[f"landmark_{r.wave}"] < r.table.threshold
                for r in self.landmark)
        return out

    def summary(self) -> dict:
        return {
            "settings": self.settings.to_dict(),
            "truth": [float(v) for v in self.truth],
            "observe": list(self.observe),
            "target": self.target,
            "waves": [r.to_dict() for r in self.functional],
            "landmark_waves": [r.to_dict() for r in self.landmark],
            "truth_implausibility": {k: float(v) for k, v in self.truth_implausibility.items()},
            "forecasts": {k: {kk: float(vv) for kk, vv in v.items() if kk != "curves"}
                          for k, v in self.forecasts.items()},
            "checks": self.checks(),
        }


def _forecast_stats(result: WaveResult, target: str, truth_values) -> dict:
    vals = forecast_values(result, target)
    grid = result.models[target].grid
    out = {"nroy_count": float(vals.shape[0]), "curves": vals}
    if vals.shape[0] == 0:
        out.update(area=float("nan"), coverage=0.0)
        return out
    out["area"] = envelope_area(vals, grid)
    out["coverage"] = envelope_coverage(vals, truth_values)
    if vals.shape[0] >= 4:
        box = functional_boxplot(vals, grid)
        out["boxplot_area"] = box.envelope_area()
        out["boxplot_coverage"] = box.coverage(truth_values)
        out["outliers"] = float(box.outliers.size)
    return out


def _run_method(method: str, space: ParameterSpace, settings: TwinSettings,
                observations: dict, scenario: Scenario, target: str, truth,
                report: TwinReport, workers: int, timings: Timings, first: WaveResult | None):
    results = []
    current = space
    smoother = scenario.smoother()
    obs = {g: observations[g] for g in report.observe}
    for w in range(1, settings.n_waves + 1):
        cfg = settings.wave_config(w, method, report.observe, (target,) if target else ())
        if w == 1 and first is not None:
            res = run_wave(current, cfg, obs, scenario, workers, timings, models=first.models,
                           design=first.design, candidates=first.candidates)
        else:
            res = run_wave(current, cfg, obs, scenario, workers, timings)
        tab = point_implausibility(res, truth, obs, smoother)
        report.truth_implausibility[f"{method}_{w}"] = float(tab.combined()[0])
        log.info("%s wave %d: %s", method, w, res.counts())
        results.append(res)
        if res.all_ruled_out:
            break
        current = next_space(res)
    return results


def run_twin(settings: TwinSettings | None = None, scenario: Scenario | None = None,
             space: ParameterSpace | None = None, workers: int = 1,
             timings: Timings | None = None) -> TwinReport:
    settings = settings or TwinSettings()
    scenario = scenario or default_scenario()
    space = space or default_space()
    timings = timings or Timings()
    if scenario.truth is None:
        raise ValueError("scenario has no truth parameter for a twin experiment")
    truth = np.asarray(scenario.truth, dtype=float)
    observe_gauges = list(settings.observe or scenario.names(("dart", "virtual")))
    target = settings.target or (scenario.names(("coastal",)) or [""])[0]
    gauges = observe_gauges + ([target] if target else [])
    smoother = scenario.smoother()
    observations = observe(scenario, truth, gauges, smoother)
    report = TwinReport(settings, truth, observe_gauges, target, [])
    report.functional = _run_method("functional", space, settings, observations, scenario,
                                    target, truth, report, workers, timings, None)
    if settings.landmarks:
        report.landmark = _run_method("landmark", space, settings, observations, scenario,
                                      target, truth, report, workers, timings,
                                      report.functional[0])
    if target:
        truth_values = observations[target](scenario.grid.points)
        report.truth_curve = truth_values
        report.forecasts["functional"] = _forecast_stats(report.functional[-1], target,
                                                         truth_values)
        if report.landmark:
            report.forecasts["landmark"] = _forecast_stats(report.landmark[-1], target,
                                                           truth_values)
    return report
