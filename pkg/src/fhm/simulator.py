"""Analytic dipole ring-wave simulator used in place of a tsunami code.

The source is a peak/trough pair whose midpoint sits at (x0, y0); the pair
is separated by seven times ``sy`` and each lobe has radial spread ``sx``.
The wave travels outward at constant speed ``c``, so a gauge at distance
``r`` sees

    eta(tau) = h * sqrt(sx*sy) / sqrt(r)
               * [exp(-(r - c*tau + 3.5*sy)^2 / (2*sx^2))
                  - exp(-(r - c*tau - 3.5*sy)^2 / (2*sx^2))]

with ``tau`` running over the gauge's arrival window.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .design_space import DesignMatrix, ParameterSpace
from .functional_data import (BSplineBasis, FunctionalCurve, GridSmoother, TimeGrid,
                              read_series_csv, write_series_csv)

SEPARATION_HALF = 3.5


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SourceParams:
    x0: float
    y0: float
    sx: float
    sy: float
    h: float

    def __post_init__(self):
        if not (self.sx > 0 and self.sy > 0 and self.h > 0):
            raise SimulationError("sx, sy and h must be positive")

    @classmethod
    def from_vector(cls, theta) -> "SourceParams":
        v = np.asarray(theta, dtype=float).ravel()
        if v.size != 5:
            raise SimulationError("source vector needs 5 entries (x0, y0, sx, sy, h)")
        return cls(*map(float, v))

    def as_vector(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.sx, self.sy, self.h])


@dataclass(frozen=True)
class Gauge:
    name: str
    gx: float
    gy: float
    t_start: float
    t_end: float
    role: str = "observation"

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise SimulationError(f"gauge {self.name}: t_start must precede t_end")

    def times(self, grid: TimeGrid) -> np.ndarray:
        """Grid mapped back to the gauge's original time units."""
        return self.t_start + grid.points * (self.t_end - self.t_start)


def dipole_waveform(params: SourceParams, gauge: Gauge, unit_times, wave_speed: float) -> np.ndarray:
    """Closed-form sea-surface elevation at the gauge for unit times in [0, 1]."""
    if wave_speed <= 0:
        raise SimulationError("wave speed must be positive")
    r = float(np.hypot(gauge.gx - params.x0, gauge.gy - params.y0))
    if r == 0.0:
        raise SimulationError(f"gauge {gauge.name} coincides with the source midpoint")
    tau = gauge.t_start + np.asarray(unit_times, dtype=float) * (gauge.t_end - gauge.t_start)
    front = r - wave_speed * tau
    off = SEPARATION_HALF * params.sy
    two_var = 2.0 * params.sx ** 2
    amp = params.h * np.sqrt(params.sx * params.sy) / np.sqrt(r)
    return amp * (np.exp(-(front + off) ** 2 / two_var) - np.exp(-(front - off) ** 2 / two_var))


@dataclass(frozen=True)
class Scenario:
    """Gauge layout, wave speed and curve representation for the simulator."""

    gauges: tuple
    wave_speed: float
    grid_size: int = 240
    order: int = 4
    interior_knots: int = 25
    penalty: float = 1e-6
    time_units: str = "min"
    truth: tuple | None = None
    extra: dict = field(default_factory=dict)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.grid_size)

    @property
    def basis(self) -> BSplineBasis:
        return BSplineBasis.uniform(self.interior_knots, self.order)

    def smoother(self) -> GridSmoother:
        return self._smoother

    @cached_property
    def _smoother(self) -> GridSmoother:
        return GridSmoother(self.grid, self.basis, self.penalty)

    def gauge(self, name: str) -> Gauge:
        for g in self.gauges:
            if g.name == name:
                return g
        raise SimulationError(f"unknown gauge {name!r}")

    def names(self, roles=None) -> list:
        return [g.name for g in self.gauges if roles is None or g.role in roles]

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        try:
            gauges = tuple(Gauge(g["name"], float(g["x"]), float(g["y"]),
                                 float(g["t_start"]), float(g["t_end"]),
                                 g.get("role", "observation"))
                           for g in data["gauges"])
            basis = data.get("basis", {})
            truth = data.get("truth")
            return cls(gauges, float(data["wave_speed"]), int(data.get("grid_size", 240)),
                       int(basis.get("order", 4)), int(basis.get("interior_knots", 25)),
                       float(basis.get("penalty", 1e-6)), data.get("time_units", "min"),
                       tuple(float(v) for v in truth) if truth is not None else None)
        except (KeyError, TypeError) as exc:
            raise SimulationError(f"malformed scenario JSON: {exc}") from None

    def to_dict(self) -> dict:
        d = {
            "wave_speed": self.wave_speed,
            "grid_size": self.grid_size,
            "time_units": self.time_units,
            "basis": {"order": self.order, "interior_knots": self.interior_knots,
                      "penalty": self.penalty},
            "gauges": [{"name": g.name, "x": g.gx, "y": g.gy, "t_start": g.t_start,
                        "t_end": g.t_end, "role": g.role} for g in self.gauges],
        }
        if self.truth is not None:
            d["truth"] = list(self.truth)
        return d

    @classmethod
    def from_json(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_scenario() -> Scenario:
    text = resources.files("fhm.data").joinpath("scenario.json").read_text()
    return Scenario.from_dict(json.loads(text))


def default_space() -> ParameterSpace:
    text = resources.files("fhm.data").joinpath("space.json").read_text()
    return ParameterSpace.from_dict(json.loads(text))


def simulate(params: SourceParams, gauge: Gauge, grid: TimeGrid, wave_speed: float,
             smoother: GridSmoother | None = None) -> FunctionalCurve:
    """Fitted curve of the dipole waveform sampled on ``grid``."""
    smoother = smoother or GridSmoother(grid)
    if smoother.grid != grid:
        raise SimulationError("smoother was built for a different grid")
    values = dipole_waveform(params, gauge, grid.points, wave_speed)
    return smoother.curve(values, (gauge.t_start, gauge.t_end))


class Ensemble:
    """Simulated curves indexed by (design row, gauge name).

    Stored as a coefficient array of shape (N, n_gauges, n_basis).
    """

    def __init__(self, design: DesignMatrix, gauges, smoother: GridSmoother, coefficients):
        self.design = design
        self.gauges = tuple(gauges)
        self.smoother = smoother
        self.coefficients = np.asarray(coefficients, dtype=float)
        self._index = {g.name: i for i, g in enumerate(self.gauges)}

    @property
    def grid(self) -> TimeGrid:
        return self.smoother.grid

    def __len__(self):
        return self.coefficients.shape[0] * self.coefficients.shape[1]

    def curve(self, row: int, gauge: str) -> FunctionalCurve:
        g = self.gauges[self._index[gauge]]
        return FunctionalCurve(self.smoother.basis, self.coefficients[row, self._index[gauge]],
                               (g.t_start, g.t_end))

    def values(self, gauge: str) -> np.ndarray:
        """Curve values on the grid for one gauge, shape (N, q)."""
        E = self.smoother.basis.design_matrix(self.grid.points)
        return self.coefficients[:, self._index[gauge]] @ E.T

    def write(self, directory, comment: str | None = None, manifest_extra: dict | None = None):
        """One ``time,value`` CSV per (row, gauge) plus ``manifest.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for gi, g in enumerate(self.gauges):
            times = g.times(self.grid)
            vals = self.values(g.name)
            for row in range(len(self.design)):
                name = f"run{row:04d}_{g.name}.csv"
                write_series_csv(directory / name, times, vals[row], comment)
                files.append({"row": row, "gauge": g.name, "file": name})
        manifest = {
            "n_rows": len(self.design),
            "gauges": [g.name for g in self.gauges],
            "grid_size": self.grid.count,
            "space": self.design.space.to_dict(),
            "design": self.design.points.tolist(),
            "files": files,
        }
        manifest.update(manifest_extra or {})
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")

    @classmethod
    def read(cls, directory, scenario: Scenario) -> "Ensemble":
        directory = Path(directory)
        mpath = directory / "manifest.json"
        if not mpath.exists():
            raise SimulationError(f"missing ensemble manifest {mpath}")
        manifest = json.loads(mpath.read_text())
        space = ParameterSpace.from_dict(manifest["space"])
        design = DesignMatrix(space, manifest["design"])
        gauges = [scenario.gauge(n) for n in manifest["gauges"]]
        smoother = scenario.smoother()
        coef = np.zeros((manifest["n_rows"], len(gauges), smoother.basis.n_basis))
        gidx = {g.name: i for i, g in enumerate(gauges)}
        # stored values already lie in the spline space, so an unpenalized
        # solve recovers the coefficients instead of smoothing a second time
        E = smoother.basis.design_matrix(smoother.grid.points)
        for entry in manifest["files"]:
            _, vals = read_series_csv(directory / entry["file"])
            coef[entry["row"], gidx[entry["gauge"]]] = np.linalg.lstsq(E, vals, rcond=None)[0]
        return cls(design, gauges, smoother, coef)


def run_ensemble(design: DesignMatrix, gauges, grid: TimeGrid, wave_speed: float,
                 smoother: GridSmoother | None = None, workers: int = 1) -> Ensemble:
    """Simulate every design row at every gauge; output order follows the inputs."""
    gauges = list(gauges)
    if len(design) == 0 or not gauges:
        raise SimulationError("need a nonempty design and at least one gauge")
    smoother = smoother or GridSmoother(grid)

    def one_row(row):
        try:
            params = SourceParams.from_vector(design.points[row])
        except SimulationError as exc:
            raise SimulationError(f"design row {row}: {exc}") from None
        out = np.empty((len(gauges), smoother.basis.n_basis))
        for gi, g in enumerate(gauges):
            try:
                vals = dipole_waveform(params, g, grid.points, wave_speed)
            except SimulationError as exc:
                raise SimulationError(f"design row {row}, gauge {g.name}: {exc}") from None
            out[gi] = smoother.fit @ vals
        return out

    rows = range(len(design))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            coef = list(pool.map(one_row, rows))
    else:
        coef = [one_row(r) for r in rows]
    return Ensemble(design, gauges, smoother, np.stack(coef))
