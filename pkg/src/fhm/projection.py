"""Random projections of curves onto Wiener-process paths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel
from .functional_data import FunctionalCurve, TimeGrid


class ProjectionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WienerPath:
    grid: TimeGrid
    values: np.ndarray


@dataclass(frozen=True, eq=False, repr=False)
class ProjectionEnsemble:
    """M standard Wiener paths sampled on a shared grid.

    ``weights`` holds the trapezoid-weighted paths, so that
    ``weights @ f(grid)`` gives all M inner products of the curve f at once.
    """

    grid: TimeGrid
    paths: np.ndarray
    seed: int

    def __post_init__(self):
        p = np.asarray(self.paths, dtype=float)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] != self.grid.count:
            raise ProjectionError("paths must be an M x q array with M >= 1")
        p = p.copy()
        p.setflags(write=False)
        w = p * self.grid.trapezoid_weights()[None, :]
        w.setflags(write=False)
        object.__setattr__(self, "paths", p)
        object.__setattr__(self, "weights", w)

    def __repr__(self):
        return f"ProjectionEnsemble(M={self.M}, q={self.grid.count}, seed={self.seed})"

    @property
    def M(self) -> int:
        return self.paths.shape[0]

    def path(self, m: int) -> WienerPath:
        return WienerPath(self.grid, self.paths[m])

    def project_values(self, values) -> np.ndarray:
        """Inner products for grid-valued curves; (..., q) -> (..., M)."""
        v = np.asarray(values, dtype=float)
        if v.shape[-1] != self.grid.count:
            raise ProjectionError(
                f"curve sampled on {v.shape[-1]} points, ensemble grid has {self.grid.count}")
        return v @ self.weights.T

    def project_curve(self, curve: FunctionalCurve) -> np.ndarray:
        return self.project_values(curve(self.grid.points))


def generate(grid: TimeGrid, M: int = 1000, seed: int = 0) -> ProjectionEnsemble:
    """Wiener paths with h(0) = 0 and N(0, dt) increments between grid points."""
    if int(M) != M or M < 1:
        raise ProjectionError("number of projections must be a positive integer")
    rng = np.random.default_rng(seed)
    dt = np.diff(grid.points)
    inc = rng.standard_normal((int(M), dt.size)) * np.sqrt(dt)[None, :]
    paths = np.concatenate([np.zeros((int(M), 1)), np.cumsum(inc, axis=1)], axis=1)
    return ProjectionEnsemble(grid, paths, int(seed))


def _values_on(curve, grid: TimeGrid) -> np.ndarray:
    if isinstance(curve, FunctionalCurve):
        return curve(grid.points)
    v = np.asarray(curve, dtype=float)
    if v.shape != (grid.count,):
        raise ProjectionError("curve values do not match the path grid")
    return v


def project(curve, path: WienerPath) -> float:
    """Trapezoid approximation of the integral of curve * path over [0, 1]."""
    f = _values_on(curve, path.grid)
    return float(np.dot(path.grid.trapezoid_weights(), f * path.values))


def distance(f, g, ensemble: ProjectionEnsemble) -> float:
    """Mean absolute difference of the projections of f and g over the ensemble."""
    if ensemble.M < 1:
        raise ProjectionError("empty projection ensemble")
    pf = ensemble.project_values(_values_on(f, ensemble.grid))
    pg = ensemble.project_values(_values_on(g, ensemble.grid))
    return float(np.mean(np.abs(pf - pg)))


def distances_to(projected, reference) -> np.ndarray:
    """Batch distance of many projected curves (n, M) to one projected curve (M,)."""
    projected = np.atleast_2d(projected)
    reference = np.asarray(reference, dtype=float)
    if projected.shape[1] != reference.size:
        raise ProjectionError("projection counts differ")
    return _accel.mean_abs_diff(projected, reference)
