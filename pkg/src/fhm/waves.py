"""Multi-wave history matching: design, simulate, emulate, screen, shrink."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .design_space import DesignMatrix, ParameterSpace, bounding_box, latin_hypercube
from .emulator import OpeModel, train
from .functional_data import GridSmoother
from .implausibility import (KINDS, UNIMODAL_THRESHOLD, ImplausibilityTable, estimate_shared,
                             score_all, table_from_scores, threshold)
from .landmarks import landmark_scores
from .projection import generate
from .simulator import Ensemble, Scenario, run_ensemble

log = logging.getLogger(__name__)


class WaveError(RuntimeError):
    pass


class Timings:
    """Accumulates (stage, seconds, count) rows for ``timings.csv``."""

    def __init__(self):
        self.rows = []

    def add(self, stage: str, seconds: float, count: int = 1):
        self.rows.append((stage, float(seconds), int(count)))

    def timed(self, stage: str, count: int = 1):
        timings = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timings.add(stage, time.perf_counter() - self.t0, count)

        return _Ctx()

    def write_csv(self, path, comment: str | None = None):
        with open(path, "w") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            fh.write("stage,seconds,count,seconds_per_item\n")
            for stage, sec, n in self.rows:
                fh.write(f"{stage},{sec:.6f},{n},{sec / max(n, 1):.6g}\n")


@dataclass
class WaveConfig:
    wave: int = 1
    n_candidates: int = 10_000
    design_size: int = 100
    gauges: tuple = ()
    targets: tuple = ()
    threshold_mode: str = "general"
    n_projections: int = 1000
    n_samples: int = 50
    k_folds: int = 5
    target_frac: float = 0.05
    use_derivative: bool = True
    pooling: str = "kind"
    method: str = "functional"
    seed_design: int = 0
    seed_candidates: int = 1
    seed_projection: int = 2
    seed_folds: int = 3

    def __post_init__(self):
        if self.wave < 1:
            raise WaveError("wave index must be >= 1")
        if self.n_candidates < self.design_size:
            raise WaveError("candidate count must be at least the design size")
        if self.method not in ("functional", "landmark"):
            raise WaveError(f"unknown screening method {self.method!r}")
        self.gauges = tuple(self.gauges)
        self.targets = tuple(self.targets)

    @classmethod
    def seeded(cls, wave: int, seed: int, **kwargs) -> "WaveConfig":
        """Per-stage seeds derived from one global seed and the wave index."""
        ss = np.random.SeedSequence([int(seed), int(wave)])
        s = [int(v) for v in ss.generate_state(4)]
        return cls(wave=wave, seed_design=s[0], seed_candidates=s[1], seed_projection=s[2],
                   seed_folds=s[3], **kwargs)

    @property
    def kinds(self) -> tuple:
        return KINDS if self.use_derivative else ("curve",)

    @property
    def threshold(self) -> float:
        if self.threshold_mode == "none":
            return float("inf")
        if self.method == "landmark":
            return UNIMODAL_THRESHOLD
        return threshold(self.threshold_mode)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gauges"] = list(self.gauges)
        d["targets"] = list(self.targets)
        return d


@dataclass
class WaveResult:
    wave: int
    space: ParameterSpace
    config: WaveConfig
    design: DesignMatrix
    models: dict
    table: ImplausibilityTable
    shared: dict
    ensemble: Ensemble | None = None
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def candidates(self) -> np.ndarray:
        return self.table.candidates

    @property
    def nroy_mask(self) -> np.ndarray:
        return self.table.nroy()

    @property
    def nroy(self) -> np.ndarray:
        return self.candidates[self.nroy_mask]

    @property
    def all_ruled_out(self) -> bool:
        return not np.any(self.nroy_mask)

    def nroy_bounds(self) -> dict:
        pts = self.nroy
        names = self.space.names
        if pts.size == 0:
            return {}
        return {n: [float(pts[:, i].min()), float(pts[:, i].max())] for i, n in enumerate(names)}

    def counts(self) -> dict:
        t = self.table
        obs = list(self.config.gauges)
        out = {"candidates": int(t.candidates.shape[0]),
               "nroy": int(np.sum(t.nroy()))}
        if self.config.method == "functional":
            out["nroy_curve_only"] = int(np.sum(t.nroy(kinds=("curve",))))
        out["nroy_fraction"] = out["nroy"] / out["candidates"]
        for g in obs if len(obs) > 1 else ():
            out[f"nroy_without_{g}"] = int(np.sum(t.nroy(gauges=[x for x in obs if x != g])))
        return out

    def to_dict(self) -> dict:
        d = {
            "wave": self.wave,
            "config": self.config.to_dict(),
            "space": self.space.to_dict(),
            "shared_uncertainty": {k: float(v) for k, v in self.shared.items()},
            "threshold": self.table.threshold,
            "counts": self.counts(),
            "nroy_bounds": self.nroy_bounds(),
            "all_ruled_out": self.all_ruled_out,
            "message": self.message,
        }
        if not self.all_ruled_out:
            d["next_space"] = next_space(self).to_dict()
        d.update(self.extra)
        return d


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def design_wave(space: ParameterSpace, config: WaveConfig) -> DesignMatrix:
    return latin_hypercube(space, config.design_size, config.seed_design)


def simulate_wave(design: DesignMatrix, scenario: Scenario, gauges,
                  smoother: GridSmoother | None = None, workers: int = 1) -> Ensemble:
    gs = [scenario.gauge(g) for g in gauges]
    return run_ensemble(design, gs, scenario.grid, scenario.wave_speed,
                        smoother or scenario.smoother(), workers)


def train_models(ensemble: Ensemble, gauges=None, smoother: GridSmoother | None = None,
                 meta: dict | None = None) -> dict:
    """One OPE per gauge, correlation lengths fitted by marginal likelihood."""
    gauges = list(gauges or [g.name for g in ensemble.gauges])
    out = {}
    for g in gauges:
        gauge = next(x for x in ensemble.gauges if x.name == g)
        m = dict(meta or {})
        m.update({"gauge": g, "interval": [gauge.t_start, gauge.t_end]})
        out[g] = train(ensemble.values(g), ensemble.design.space, ensemble.design.points,
                       ensemble.grid, smoother=smoother or ensemble.smoother, meta=m)
    return out


def screen(space: ParameterSpace, config: WaveConfig, models: dict, observations: dict,
           smoother: GridSmoother, workers: int = 1, timings: Timings | None = None,
           candidates=None):
    """Score LHS candidates and build the implausibility table.

    Returns (table, scores).
    """
    timings = timings or Timings()
    if candidates is None:
        candidates = latin_hypercube(space, config.n_candidates, config.seed_candidates).points
    gauges = list(config.gauges or observations)
    missing = [g for g in gauges if g not in models]
    if missing:
        raise WaveError(f"untrained gauges: {missing}")
    with timings.timed(f"screen_{config.method}", candidates.shape[0] * len(gauges)):
        if config.method == "landmark":
            scores = landmark_scores(candidates, observations, models, smoother, gauges,
                                     config.n_samples, config.seed_folds, workers)
        else:
            ensemble = generate(smoother.grid, config.n_projections, config.seed_projection)
            scores = score_all(candidates, observations, models, ensemble, smoother, gauges,
                               config.kinds, config.n_samples, config.seed_folds, workers)
    T = config.threshold
    shared = estimate_shared(scores, config.pooling, config.k_folds, config.target_frac,
                             T, config.seed_folds)
    return table_from_scores(candidates, scores, shared, T, space.names), scores


def run_wave(space: ParameterSpace, config: WaveConfig, observations: dict,
             scenario: Scenario, workers: int = 1, timings: Timings | None = None,
             models: dict | None = None, design: DesignMatrix | None = None,
             candidates=None) -> WaveResult:
    """Design -> simulate -> train -> screen -> NROY for one wave.

    Pre-trained ``models`` (with their ``design``) skip the simulation and
    training stages; ``candidates`` replaces the Latin hypercube draw.
    """
    timings = timings or Timings()
    smoother = scenario.smoother()
    gauges = list(config.gauges or observations)
    to_train = gauges + [t for t in config.targets if t not in gauges]
    ens = None
    if models is None:
        design = design or design_wave(space, config)
        with timings.timed("simulation", len(design) * len(to_train)):
            ens = simulate_wave(design, scenario, to_train, smoother, workers)
        with timings.timed("training", len(to_train)):
            models = train_models(ens, to_train, smoother, {"wave": config.wave})
    elif design is None:
        first = models[gauges[0]]
        design = DesignMatrix(first.space, first.design)
    table, _ = screen(space, config, models, observations, smoother, workers, timings,
                      candidates)
    msg = ""
    if not np.any(table.nroy()):
        msg = ("all candidates ruled out; revisit the uncertainty specification "
               "(emulator or shared variances are likely too small)")
        log.warning("wave %d: %s", config.wave, msg)
    return WaveResult(config.wave, space, config, design, models, table, table.shared, ens,
                      msg)


def next_space(result: WaveResult) -> ParameterSpace:
    """Bounding box of the NROY candidates, clipped to the current space."""
    if result.all_ruled_out:
        raise WaveError("empty NROY set; no next-wave space")
    box = bounding_box(result.nroy, result.space.names, result.space.units)
    return box.intersect(result.space)


def forecast_values(result: WaveResult, gauge: str, model: OpeModel | None = None,
                    mask=None) -> np.ndarray:
    """Emulated mean curves (grid values, smoothed) at NROY candidates."""
    model = model or result.models.get(gauge)
    if model is None:
        raise WaveError(f"no trained model for target gauge {gauge}")
    if mask is None:
        mask = result.nroy_mask
    pts = result.candidates[mask]
    if pts.shape[0] == 0:
        warnings.warn("empty NROY set; nothing to forecast", RuntimeWarning, stacklevel=2)
        return np.zeros((0, model.grid.count))
    smoother = model.smoother or GridSmoother(model.grid)
    return smoother.smooth(model.predict_mean_values(pts))


def forecast(result: WaveResult, gauge: str, model: OpeModel | None = None,
             mask=None) -> list:
    """Emulated mean curves for an unobserved gauge, one per NROY candidate."""
    model = model or result.models.get(gauge)
    if model is None:
        raise WaveError(f"no trained model for target gauge {gauge}")
    vals = forecast_values(result, gauge, model, mask)
    smoother = model.smoother or GridSmoother(model.grid)
    interval = tuple(model.meta.get("interval", (0.0, 1.0)))
    return [smoother.curve(v, interval) for v in vals]


def run_waves(space: ParameterSpace, configs, observations: dict, scenario: Scenario,
              workers: int = 1, timings: Timings | None = None) -> list:
    """Run waves in sequence, each inside the previous wave's NROY box."""
    results = []
    current = space
    for cfg in configs:
        res = run_wave(current, cfg, observations, scenario, workers, timings)
        results.append(res)
        if res.all_ruled_out:
            break
        current = next_space(res)
    return results


def observe(scenario: Scenario, theta, gauges, smoother: GridSmoother | None = None) -> dict:
    """Noise-free synthetic observations at ``theta`` (twin experiments)."""
    from .simulator import SourceParams, simulate
    smoother = smoother or scenario.smoother()
    params = SourceParams.from_vector(theta)
    return {g: simulate(params, scenario.gauge(g), scenario.grid, scenario.wave_speed, smoother)
            for g in gauges}


def point_implausibility(result: WaveResult, theta, observations: dict,
                         smoother: GridSmoother) -> ImplausibilityTable:
    """Score extra points with the wave's models and fixed shared variances."""
    cfg = result.config
    gauges = list(cfg.gauges or observations)
    if cfg.method == "landmark":
        scores = landmark_scores(np.atleast_2d(theta), observations, result.models, smoother,
                                 gauges, cfg.n_samples, cfg.seed_folds)
    else:
        ensemble = generate(smoother.grid, cfg.n_projections, cfg.seed_projection)
        scores = score_all(np.atleast_2d(theta), observations, result.models, ensemble,
                           smoother, gauges, cfg.kinds, cfg.n_samples, cfg.seed_folds)
    return table_from_scores(np.atleast_2d(theta), scores, result.shared, cfg.threshold,
                             result.space.names)
