"""Command-line entry point: ``fhm <command> [--config ...] [--out ...]``.

Commands run single pipeline stages (simulate, train, wave, forecast,
compare) against an output directory, or the whole twin experiment.
Every output records the seed and a hash of the resolved configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .design_space import DesignMatrix, ParameterSpace
from .emulator import OpeModel
from .functional_data import fit_values, read_series_csv, write_series_csv
from .projection import distance, generate
from .reporting import (envelope_area, envelope_coverage, functional_boxplot,
                        parameter_summary, write_comparison, write_forecast_bands,
                        write_svg, write_violin)
from .simulator import Ensemble, Scenario, default_scenario, default_space
from .twin import TwinSettings, run_twin
from .waves import (Timings, WaveConfig, design_wave, observe, point_implausibility, run_wave,
                    simulate_wave, train_models)

log = logging.getLogger("fhm")

WAVE_KEYS = ("n_candidates", "design_size", "n_projections", "n_samples", "k_folds",
             "target_frac", "threshold_mode", "use_derivative", "pooling")


class DependencyError(RuntimeError):
    """A stage was run before the stage that produces its inputs."""

    def __init__(self, missing, hint=""):
        self.missing = str(missing)
        super().__init__(f"missing artifact {self.missing}" + (f" ({hint})" if hint else ""))


@dataclass
class RunConfig:
    space: ParameterSpace
    scenario: Scenario
    seed: int = 2024
    n_waves: int = 2
    observe: list = field(default_factory=list)
    target: str = ""
    observations: dict = field(default_factory=dict)
    wave: dict = field(default_factory=dict)
    landmarks: bool = True
    source: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path=None, seed=None) -> "RunConfig":
        raw = {}
        base = Path(".")
        if path is not None:
            p = Path(path)
            if not p.exists():
                raise DependencyError(p, "config file")
            raw = json.loads(p.read_text())
            base = p.parent
        resolve = lambda v: v if Path(v).is_absolute() else str(base / v)
        space = (ParameterSpace.from_json(resolve(raw["space"])) if raw.get("space")
                 else default_space())
        scenario = (Scenario.from_json(resolve(raw["scenario"])) if raw.get("scenario")
                    else default_scenario())
        unknown = set(raw.get("wave", {})) - set(WAVE_KEYS)
        if unknown:
            raise ValueError(f"unknown wave settings: {sorted(unknown)}")
        observe_gauges = list(raw.get("observe") or scenario.names(("dart", "virtual")))
        target = raw.get("target") or (scenario.names(("coastal",)) or [""])[0]
        obs = {k: resolve(v) for k, v in raw.get("observations", {}).items()}
        cfg = cls(space, scenario, int(seed if seed is not None else raw.get("seed", 2024)),
                  int(raw.get("n_waves", 2)), observe_gauges, target, obs,
                  dict(raw.get("wave", {})), bool(raw.get("landmarks", True)), raw)
        for g in observe_gauges + ([target] if target else []):
            scenario.gauge(g)
        return cfg

    def resolved(self) -> dict:
        return {"space": self.space.to_dict(), "scenario": self.scenario.to_dict(),
                "seed": self.seed, "n_waves": self.n_waves, "observe": self.observe,
                "target": self.target, "observations": self.observations,
                "wave": self.wave, "landmarks": self.landmarks}

    @property
    def config_hash(self) -> str:
        text = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @property
    def stamp(self) -> str:
        return f"seed={self.seed} config_hash={self.config_hash}"

    def wave_config(self, wave: int, method: str = "functional") -> WaveConfig:
        return WaveConfig.seeded(wave, self.seed, gauges=tuple(self.observe),
                                 targets=(self.target,) if self.target else (),
                                 method=method, **self.wave)

    def twin_settings(self) -> TwinSettings:
        kw = {k: v for k, v in self.wave.items() if k in TwinSettings.__dataclass_fields__}
        return TwinSettings(seed=self.seed, n_waves=self.n_waves, observe=tuple(self.observe),
                            target=self.target, landmarks=self.landmarks, **kw)


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------

def _dump(path, data) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _write_points(path, points, names, stamp, extra_cols=None) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {stamp}\n")
        cols = list(names) + list(extra_cols or {})
        fh.write(",".join(cols) + "\n")
        for i, row in enumerate(np.atleast_2d(points)):
            vals = [repr(float(v)) for v in row]
            vals += [str(extra_cols[c][i]) for c in (extra_cols or {})]
            fh.write(",".join(vals) + "\n")


def _append_timings(out: Path, timings: Timings, stamp: str) -> None:
    path = out / "timings.csv"
    new = not path.exists()
    with open(path, "a") as fh:
        if new:
            fh.write(f"# {stamp}\n")
            fh.write("stage,seconds,count,seconds_per_item\n")
        for stage, sec, n in timings.rows:
            fh.write(f"{stage},{sec:.6f},{n},{sec / max(n, 1):.6g}\n")


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DependencyError(path, hint)
    return path


def _wave_dir(out: Path, wave: int, method: str = "functional") -> Path:
    root = out if method == "functional" else out / "landmark"
    return root / f"wave_{wave}"


def _wave_space(cfg: RunConfig, out: Path, wave: int, method: str = "functional"):
    if wave == 1:
        return cfg.space
    prev = _require(_wave_dir(out, wave - 1, method) / "result.json",
                    f"run wave {wave - 1} first")
    data = json.loads(prev.read_text())
    if "next_space" not in data:
        raise DependencyError(prev, f"wave {wave - 1} ruled out every candidate")
    return ParameterSpace.from_dict(data["next_space"])


def _observations(cfg: RunConfig, out: Path, gauges) -> dict:
    """Observed curves from config CSVs, or synthetic ones at the scenario truth."""
    smoother = cfg.scenario.smoother()
    obs = {}
    synthetic = [g for g in gauges if g not in cfg.observations]
    if synthetic:
        if cfg.scenario.truth is None:
            raise DependencyError(f"observations for {synthetic}",
                                  "scenario has no truth; list observation CSVs in the config")
        obs.update(observe(cfg.scenario, cfg.scenario.truth, synthetic, smoother))
    for g in gauges:
        if g in cfg.observations:
            obs[g] = _observed_curve(cfg, g)
    odir = out / "observations"
    odir.mkdir(parents=True, exist_ok=True)
    for g, c in obs.items():
        gauge = cfg.scenario.gauge(g)
        write_series_csv(odir / f"{g}.csv", gauge.times(cfg.scenario.grid),
                         c(cfg.scenario.grid.points), cfg.stamp)
    return obs


def _observed_curve(cfg: RunConfig, g: str):
    """Fit an observed gauge series, with times taken relative to the gauge window."""
    gauge = cfg.scenario.gauge(g)
    t, v = read_series_csv(_require(Path(cfg.observations[g]), "observation CSV"))
    u = (t - gauge.t_start) / (gauge.t_end - gauge.t_start)
    if u.min() < -1e-9 or u.max() > 1 + 1e-9:
        raise ValueError(f"observation times for {g} fall outside its arrival window")
    return fit_values(np.clip(u, 0.0, 1.0), v, cfg.scenario.basis, cfg.scenario.penalty,
                      (gauge.t_start, gauge.t_end))


def _load_models(wdir: Path, gauges, smoother) -> dict:
    mdir = _require(wdir / "models", "run train first")
    out = {}
    for g in gauges:
        out[g] = OpeModel.load(_require(mdir / f"{g}.json", "run train first"), smoother)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out: Path, wave: int, workers: int,
                 method: str = "functional") -> dict:
    wcfg = cfg.wave_config(wave, method)
    space = _wave_space(cfg, out, wave, method)
    wdir = _wave_dir(out, wave, method)
    timings = Timings()
    design = design_wave(space, wcfg)
    gauges = list(cfg.observe) + ([cfg.target] if cfg.target not in cfg.observe and cfg.target
                                  else [])
    with timings.timed("simulation", len(design) * len(gauges)):
        ens = simulate_wave(design, cfg.scenario, gauges, workers=workers)
    wdir.mkdir(parents=True, exist_ok=True)
    _write_points(wdir / "design.csv", design.points, space.names, cfg.stamp)
    ens.write(wdir / "ensemble", cfg.stamp, {"seed": cfg.seed, "config_hash": cfg.config_hash,
                                             "wave": wave})
    _append_timings(out, timings, cfg.stamp)
    return {"wave": wave, "design": str(wdir / "design.csv"), "runs": len(design) * len(gauges)}


def cmd_train(cfg: RunConfig, out: Path, wave: int, method: str = "functional") -> dict:
    wdir = _wave_dir(out, wave, method)
    _require(wdir / "ensemble" / "manifest.json", "run simulate first")
    ens = Ensemble.read(wdir / "ensemble", cfg.scenario)
    timings = Timings()
    names = [g.name for g in ens.gauges]
    with timings.timed("training", len(names)):
        models = train_models(ens, names, cfg.scenario.smoother(),
                              {"wave": wave, "seed": cfg.seed, "config_hash": cfg.config_hash})
    for g, m in models.items():
        m.save(wdir / "models" / f"{g}.json")
    _append_timings(out, timings, cfg.stamp)
    return {"wave": wave, "models": sorted(models)}


def cmd_wave(cfg: RunConfig, out: Path, wave: int, workers: int,
             method: str = "functional") -> dict:
    wdir = _wave_dir(out, wave, method)
    space = _wave_space(cfg, out, wave, method)
    smoother = cfg.scenario.smoother()
    _require(wdir / "ensemble" / "manifest.json", "run simulate first")
    trained = [g for g in cfg.observe + [cfg.target] if g]
    models = _load_models(wdir, trained, smoother)
    obs = _observations(cfg, out, cfg.observe)
    wcfg = cfg.wave_config(wave, method)
    design = DesignMatrix(models[cfg.observe[0]].space, models[cfg.observe[0]].design)
    timings = Timings()
    res = run_wave(space, wcfg, obs, cfg.scenario, workers, timings, models=models,
                   design=design)
    res.table.write_csv(wdir / "implausibility.csv", cfg.stamp)
    _write_points(wdir / "nroy.csv", res.nroy, space.names, cfg.stamp)
    data = res.to_dict()
    data.update(seed=cfg.seed, config_hash=cfg.config_hash)
    if cfg.scenario.truth is not None and not cfg.observations:
        tab = point_implausibility(res, cfg.scenario.truth, obs, smoother)
        data["truth_implausibility"] = float(tab.combined()[0])
        data["truth_in_nroy"] = bool(tab.nroy()[0])
    _dump(wdir / "result.json", data)
    _append_timings(out, timings, cfg.stamp)
    return {"wave": wave, "counts": res.counts(), "all_ruled_out": res.all_ruled_out}


def _wave_result(cfg: RunConfig, out: Path, wave: int, method: str):
    """Rebuild a wave's result from its files (for forecast and compare)."""
    from .implausibility import ImplausibilityTable
    wdir = _wave_dir(out, wave, method)
    rpath = _require(wdir / "result.json", f"run wave {wave} first")
    data = json.loads(rpath.read_text())
    smoother = cfg.scenario.smoother()
    rows = [ln for ln in (wdir / "implausibility.csv").read_text().splitlines()
            if ln and not ln.startswith("#")]
    head = rows[0].split(",")
    arr = np.array([[float(v) for v in ln.split(",")] for ln in rows[1:]])
    space = ParameterSpace.from_dict(data["space"])
    P = space.dim
    keys = [h[2:] for h in head[1 + P:-2]]
    table = ImplausibilityTable(arr[:, 1:1 + P], {k: arr[:, 1 + P + i] for i, k in enumerate(keys)},
                                data["shared_uncertainty"], data["threshold"], space.names, keys)
    return data, table, smoother


def cmd_forecast(cfg: RunConfig, out: Path, wave: int, gauge: str | None,
                 method: str = "functional") -> dict:
    gauge = gauge or cfg.target
    if not gauge:
        raise ValueError("no target gauge given")
    data, table, smoother = _wave_result(cfg, out, wave, method)
    wdir = _wave_dir(out, wave, method)
    mpath = wdir / "models" / f"{gauge}.json"
    if not mpath.exists():
        raise DependencyError(mpath, f"no trained model for target gauge {gauge}")
    model = OpeModel.load(mpath, smoother)
    pts = table.candidates[table.nroy()]
    fdir = wdir / f"forecast_{gauge}"
    fdir.mkdir(parents=True, exist_ok=True)
    info = {"wave": wave, "gauge": gauge, "method": method, "nroy_count": int(pts.shape[0]),
            "seed": cfg.seed, "config_hash": cfg.config_hash}
    if pts.shape[0] == 0:
        info["message"] = "empty NROY set; nothing to forecast"
        _dump(fdir / "forecast.json", info)
        return info
    vals = smoother.smooth(model.predict_mean_values(pts))
    grid = model.grid
    truth = None
    if cfg.scenario.truth is not None and not cfg.observations:
        truth = observe(cfg.scenario, cfg.scenario.truth, [gauge], smoother)[gauge](grid.points)
    info["envelope_area"] = envelope_area(vals, grid)
    if truth is not None:
        info["truth_coverage"] = envelope_coverage(vals, truth)
    if vals.shape[0] >= 4:
        box = functional_boxplot(vals, grid)
        write_forecast_bands(fdir / "forecast_bands.csv", box, truth, comment=cfg.stamp)
        write_svg(fdir / "forecast_boxplot.svg", box, vals, truth,
                  f"{gauge} forecast, wave {wave} ({method})")
        info["outliers"] = int(box.outliers.size)
    else:
        info["message"] = "fewer than four NROY curves; boxplot skipped"
    space = ParameterSpace.from_dict(data["space"])
    summ = parameter_summary(pts, space.names, list(zip(space.lower, space.upper)))
    write_violin(fdir, summ, cfg.stamp)
    _dump(fdir / "forecast.json", info)
    return info


def cmd_compare(cfg: RunConfig, out: Path, wave: int, workers: int) -> dict:
    """Landmark waves 1..wave next to the functional ones, then forecast both."""
    _require(_wave_dir(out, wave) / "result.json", f"run functional wave {wave} first")
    for w in range(1, wave + 1):
        ldir = _wave_dir(out, w, "landmark")
        if w == 1:
            # landmark wave 1 reuses the functional wave-1 ensemble and emulators
            src = _wave_dir(out, 1)
            _require(src / "models", "run train first")
            ldir.mkdir(parents=True, exist_ok=True)
            for sub in ("ensemble", "models"):
                link = ldir / sub
                if not link.exists():
                    link.symlink_to(Path("..") / ".." / src.name / sub)
        else:
            if not (ldir / "ensemble" / "manifest.json").exists():
                cmd_simulate(cfg, out, w, workers, "landmark")
            if not (ldir / "models").exists():
                cmd_train(cfg, out, w, "landmark")
        cmd_wave(cfg, out, w, workers, "landmark")
    rows = []
    for method in ("functional", "landmark"):
        info = cmd_forecast(cfg, out, wave, cfg.target, method)
        rows.append({"method": method, "nroy_count": info["nroy_count"],
                     "envelope_area": repr(info.get("envelope_area", float("nan"))),
                     "truth_coverage": repr(info.get("truth_coverage", float("nan")))})
    write_comparison(out / "comparison.csv", rows, cfg.stamp)
    return {"comparison": rows}


def unit_costs(models: dict, space: ParameterSpace, scenario: Scenario, seed: int,
               timings: Timings, repeats: int = 20) -> None:
    """Single-candidate emulation and single projected-distance timings."""
    g = next(iter(models))
    m = models[g]
    rng = np.random.default_rng(seed)
    th = space.lower + rng.random((1, space.dim)) * space.width
    m.predict_mean_values(th)
    t0 = time.perf_counter()
    for _ in range(repeats):
        m.predict_mean_values(th)
        m.predict_var_values(th)
    timings.add("emulation_per_candidate", (time.perf_counter() - t0) / repeats, 1)
    ens = generate(scenario.grid, 1000, seed)
    f, h = m.predict_mean_values(th)[0], m.Y[0]
    distance(f, h, ens)
    t0 = time.perf_counter()
    for _ in range(repeats):
        distance(f, h, ens)
    timings.add("projection_per_distance", (time.perf_counter() - t0) / repeats, 1)


def cmd_twin(cfg: RunConfig, out: Path, workers: int) -> dict:
    timings = Timings()
    t0 = time.perf_counter()
    report = run_twin(cfg.twin_settings(), cfg.scenario, cfg.space, workers, timings)
    timings.add("twin_total", time.perf_counter() - t0, 1)
    out.mkdir(parents=True, exist_ok=True)
    stamp = cfg.stamp
    for method, results in (("functional", report.functional), ("landmark", report.landmark)):
        for r in results:
            wdir = _wave_dir(out, r.wave, method)
            wdir.mkdir(parents=True, exist_ok=True)
            _write_points(wdir / "design.csv", r.design.points, r.design.space.names, stamp)
            r.table.write_csv(wdir / "implausibility.csv", stamp)
            _write_points(wdir / "nroy.csv", r.nroy, r.space.names, stamp)
            d = r.to_dict()
            d.update(seed=cfg.seed, config_hash=cfg.config_hash)
            _dump(wdir / "result.json", d)
    rows = []
    grid = cfg.scenario.grid
    for method, fc in report.forecasts.items():
        res = (report.functional if method == "functional" else report.landmark)[-1]
        fdir = _wave_dir(out, res.wave, method) / f"forecast_{report.target}"
        fdir.mkdir(parents=True, exist_ok=True)
        vals = fc["curves"]
        if vals.shape[0] >= 4:
            box = functional_boxplot(vals, grid)
            write_forecast_bands(fdir / "forecast_bands.csv", box, report.truth_curve,
                                 comment=stamp)
            write_svg(fdir / "forecast_boxplot.svg", box, vals, report.truth_curve,
                      f"{report.target} forecast, wave {res.wave} ({method})")
        if vals.shape[0] > 0:
            write_violin(fdir, parameter_summary(res.nroy, res.space.names,
                                                 list(zip(res.space.lower, res.space.upper))),
                         stamp)
        rows.append({"method": method, "nroy_count": int(fc["nroy_count"]),
                     "envelope_area": repr(fc["area"]), "truth_coverage": repr(fc["coverage"])})
    if rows:
        write_comparison(out / "comparison.csv", rows, stamp)
    unit_costs(report.functional[0].models, cfg.space, cfg.scenario, cfg.seed, timings)
    timings.write_csv(out / "timings.csv", stamp)
    summary = report.summary()
    summary.update(seed=cfg.seed, config_hash=cfg.config_hash,
                   passed=all(summary["checks"].values()))
    _dump(out / "result.json", summary)
    return {"checks": summary["checks"], "passed": summary["passed"]}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fhm", description="Functional history matching pipeline")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("simulate", "run the simulator ensemble for a wave"),
                        ("train", "train one emulator per gauge on a wave's ensemble"),
                        ("wave", "screen candidates and write the NROY set of a wave"),
                        ("forecast", "forecast a target gauge from a wave's NROY set"),
                        ("compare", "landmark baseline next to the functional forecast"),
                        ("twin", "full twin experiment with a pass/fail summary")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="run configuration JSON (defaults: bundled scenario)")
        s.add_argument("--out", default="fhm_out", help="output directory")
        s.add_argument("--seed", type=int, help="global seed (overrides the config)")
        s.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        s.add_argument("-v", "--verbose", action="store_true")
        if name in ("simulate", "train", "wave", "forecast", "compare"):
            s.add_argument("--wave", type=int, default=1)
        if name == "forecast":
            s.add_argument("--gauge", help="target gauge (default: config target)")
        if name == "twin":
            s.add_argument("--strict", action="store_true",
                           help="exit with status 3 when any twin check fails")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = RunConfig.load(args.config, args.seed)
        out.mkdir(parents=True, exist_ok=True)
        _dump(out / "run.json", {"config": cfg.resolved(), "config_hash": cfg.config_hash,
                                 "seed": cfg.seed})
        if args.command == "simulate":
            res = cmd_simulate(cfg, out, args.wave, args.workers)
        elif args.command == "train":
            res = cmd_train(cfg, out, args.wave)
        elif args.command == "wave":
            res = cmd_wave(cfg, out, args.wave, args.workers)
        elif args.command == "forecast":
            res = cmd_forecast(cfg, out, args.wave, args.gauge)
        elif args.command == "compare":
            res = cmd_compare(cfg, out, args.wave, args.workers)
        else:
            res = cmd_twin(cfg, out, args.workers)
    except DependencyError as exc:
        print(json.dumps({"error": "missing_dependency", "missing": exc.missing,
                          "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable JSON
        log.debug("failure", exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(res, indent=1, sort_keys=True, default=float))
    if args.command == "twin" and args.strict and not res["passed"]:
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
