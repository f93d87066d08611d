"""Input hyperbox, Latin hypercube designs and unit-cube coordinates."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

DEGENERATE_WIDTH = 1e-9


class DesignSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class ParameterSpace:
    """Axis-aligned box with named dimensions.

    ``units`` is free text per dimension and is carried through JSON.
    """

    names: tuple
    lower: np.ndarray
    upper: np.ndarray
    units: tuple = field(default=())

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel().copy()
        hi = np.asarray(self.upper, dtype=float).ravel().copy()
        names = tuple(str(n) for n in self.names)
        if lo.size == 0 or lo.size != hi.size or lo.size != len(names):
            raise DesignSpaceError("names, lower and upper must have equal nonzero length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise DesignSpaceError("bounds must be finite")
        if np.any(lo >= hi):
            bad = [names[i] for i in np.flatnonzero(lo >= hi)]
            raise DesignSpaceError(f"lower bound must be below upper bound for {bad}")
        units = tuple(self.units) if self.units else ("",) * lo.size
        if len(units) != lo.size:
            raise DesignSpaceError("units must match the number of dimensions")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "units", units)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def midpoint(self) -> np.ndarray:
        return (self.lower + self.upper) / 2

    def volume(self) -> float:
        return float(np.prod(self.width))

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((x >= self.lower - tol) & (x <= self.upper + tol), axis=1)

    def is_subset_of(self, other: "ParameterSpace", tol: float = 0.0) -> bool:
        return bool(np.all(self.lower >= other.lower - tol)
                    and np.all(self.upper <= other.upper + tol))

    def intersect(self, other: "ParameterSpace") -> "ParameterSpace":
        lo = np.maximum(self.lower, other.lower)
        hi = np.minimum(self.upper, other.upper)
        if np.any(lo > hi):
            raise DesignSpaceError("boxes do not intersect")
        lo, hi = _widen(lo, hi)
        return ParameterSpace(self.names, lo, hi, self.units)

    def to_dict(self) -> dict:
        dims = []
        for n, lo, hi, u in zip(self.names, self.lower, self.upper, self.units):
            d = {"name": n, "lo": float(lo), "hi": float(hi)}
            if u:
                d["units"] = u
            dims.append(d)
        return {"dims": dims}

    @classmethod
    def from_dict(cls, data: dict) -> "ParameterSpace":
        try:
            dims = data["dims"]
            return cls(tuple(d["name"] for d in dims),
                       [float(d["lo"]) for d in dims],
                       [float(d["hi"]) for d in dims],
                       tuple(d.get("units", "") for d in dims))
        except (KeyError, TypeError) as exc:
            raise DesignSpaceError(f"malformed parameter-space JSON: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "ParameterSpace":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class DesignMatrix:
    space: ParameterSpace
    points: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.points, dtype=float)).copy()
        if x.shape[0] < 1 or x.shape[1] != self.space.dim:
            raise DesignSpaceError("design must be N x P with N >= 1")
        if not np.all(self.space.contains(x, tol=1e-12)):
            raise DesignSpaceError("design points must lie inside the parameter space")
        x.setflags(write=False)
        object.__setattr__(self, "points", x)

    def __len__(self):
        return self.points.shape[0]


def latin_hypercube(space: ParameterSpace, n: int, seed: int = 0) -> DesignMatrix:
    """One point per equal-width stratum in every dimension, jittered uniformly."""
    if int(n) != n or n <= 0:
        raise DesignSpaceError("number of design points must be a positive integer")
    sampler = qmc.LatinHypercube(d=space.dim, scramble=True, seed=np.random.default_rng(seed))
    u = sampler.random(int(n))
    return DesignMatrix(space, space.lower + u * space.width)


def to_unit(space: ParameterSpace, points) -> np.ndarray:
    """Affine map of the box onto [-1, 1]^P."""
    x = np.asarray(points, dtype=float)
    if not np.all(space.contains(x, tol=1e-12 * np.max(np.abs(space.upper) + 1))):
        raise DesignSpaceError("point outside the parameter space")
    return 2.0 * (x - space.lower) / space.width - 1.0


def unit_coords(space: ParameterSpace, points) -> np.ndarray:
    """Like ``to_unit`` but without the inside-the-box check (extrapolation)."""
    x = np.asarray(points, dtype=float)
    return 2.0 * (x - space.lower) / space.width - 1.0


def from_unit(space: ParameterSpace, unit) -> np.ndarray:
    u = np.asarray(unit, dtype=float)
    if np.any(np.abs(u) > 1 + 1e-12):
        raise DesignSpaceError("unit coordinates must lie in [-1, 1]")
    return space.lower + (u + 1.0) / 2.0 * space.width


def _widen(lo, hi):
    lo, hi = lo.astype(float).copy(), hi.astype(float).copy()
    flat = hi - lo <= 0
    lo[flat] -= DEGENERATE_WIDTH / 2
    hi[flat] += DEGENERATE_WIDTH / 2
    # guard against the half-width vanishing in floating point
    still = hi <= lo
    lo[still] = np.nextafter(lo[still], -np.inf)
    hi[still] = np.nextafter(hi[still], np.inf)
    return lo, hi


def bounding_box(points, names=None, units=()) -> ParameterSpace:
    """Smallest box containing ``points``; flat dimensions are widened by 1e-9."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if x.size == 0 or x.shape[0] == 0:
        raise DesignSpaceError("cannot bound an empty point set")
    lo, hi = _widen(x.min(axis=0), x.max(axis=0))
    if names is None:
        names = tuple(f"theta{i + 1}" for i in range(x.shape[1]))
    return ParameterSpace(tuple(names), lo, hi, units)
