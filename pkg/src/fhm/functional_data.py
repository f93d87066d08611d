"""Curves on the normalized time interval [0, 1] as B-spline expansions."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import BSpline

DEFAULT_ORDER = 4
DEFAULT_INTERIOR_KNOTS = 25
DEFAULT_PENALTY = 1e-6

_TIME_TOL = 1e-12


class FunctionalDataError(ValueError):
    """Raised for invalid curve construction, fitting or evaluation."""


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing grid on [0, 1] with both endpoints included."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 4:
            raise FunctionalDataError("a time grid needs at least 4 points")
        if np.any(np.diff(pts) <= 0):
            raise FunctionalDataError("time grid must be strictly increasing")
        if abs(pts[0]) > _TIME_TOL or abs(pts[-1] - 1.0) > _TIME_TOL:
            raise FunctionalDataError("time grid must start at 0 and end at 1")
        pts = pts.copy()
        pts[0], pts[-1] = 0.0, 1.0
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, count: int) -> "TimeGrid":
        return cls(np.linspace(0.0, 1.0, int(count)))

    @property
    def count(self) -> int:
        return self.points.size

    def trapezoid_weights(self) -> np.ndarray:
        """Weights w such that w @ f(points) is the trapezoid integral."""
        dt = np.diff(self.points)
        w = np.zeros(self.count)
        w[:-1] += dt / 2
        w[1:] += dt / 2
        return w

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.count == other.count and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash((self.count, self.points.tobytes()))


@dataclass(frozen=True)
class BSplineBasis:
    """Clamped B-spline basis on [0, 1].

    ``knots`` holds the interior knots only; the boundary knots 0 and 1 are
    repeated ``order`` times in the full knot vector.
    """

    order: int
    knots: np.ndarray

    def __post_init__(self):
        if self.order < 1:
            raise FunctionalDataError("spline order must be >= 1")
        k = np.asarray(self.knots, dtype=float).ravel()
        if k.size and (np.any(np.diff(k) < 0) or k[0] <= 0.0 or k[-1] >= 1.0):
            raise FunctionalDataError("interior knots must be nondecreasing inside (0, 1)")
        k = k.copy()
        k.setflags(write=False)
        object.__setattr__(self, "knots", k)

    @classmethod
    def uniform(cls, n_interior: int = DEFAULT_INTERIOR_KNOTS,
                order: int = DEFAULT_ORDER) -> "BSplineBasis":
        return cls(order, np.linspace(0.0, 1.0, n_interior + 2)[1:-1])

    @property
    def n_basis(self) -> int:
        return self.knots.size + self.order

    @property
    def degree(self) -> int:
        return self.order - 1

    @property
    def full_knots(self) -> np.ndarray:
        k = self.order
        return np.concatenate([np.zeros(k), self.knots, np.ones(k)])

    def derived(self) -> "BSplineBasis":
        """Basis of order - 1 that holds the derivative of this basis."""
        if self.order < 2:
            raise FunctionalDataError("cannot lower the order of a piecewise-constant basis")
        return BSplineBasis(self.order - 1, self.knots)

    def design_matrix(self, times) -> np.ndarray:
        t = _check_times(times)
        return BSpline.design_matrix(t, self.full_knots, self.degree).toarray()

    def derivative_matrix(self) -> np.ndarray:
        """Matrix mapping coefficients to those of the derivative in ``derived()``."""
        if self.order < 2:
            raise FunctionalDataError("derivative of a piecewise-constant basis is not a spline")
        T, k, n = self.full_knots, self.order, self.n_basis
        D = np.zeros((n - 1, n))
        for i in range(n - 1):
            span = T[i + k] - T[i + 1]
            if span > 0:
                D[i, i] = -(k - 1) / span
                D[i, i + 1] = (k - 1) / span
        return D

    def roughness_matrix(self) -> np.ndarray:
        """Gram matrix of second derivatives, int B_i'' B_j'' dt."""
        n = self.n_basis
        if self.order < 3:
            return np.zeros((n, n))
        second = self.derived().derived()
        D2 = self.derived().derivative_matrix() @ self.derivative_matrix()
        # Gauss-Legendre with `order` nodes is exact for the squared pieces.
        nodes, weights = np.polynomial.legendre.leggauss(self.order)
        edges = np.unique(np.concatenate([[0.0], self.knots, [1.0]]))
        tq, wq = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            tq.append((b - a) / 2 * nodes + (a + b) / 2)
            wq.append((b - a) / 2 * weights)
        tq, wq = np.concatenate(tq), np.concatenate(wq)
        B2 = second.design_matrix(tq) @ D2
        return B2.T @ (wq[:, None] * B2)

    def __eq__(self, other):
        if not isinstance(other, BSplineBasis):
            return NotImplemented
        return self.order == other.order and np.array_equal(self.knots, other.knots)

    def __hash__(self):
        return hash((self.order, self.knots.tobytes()))


@dataclass(frozen=True)
class FunctionalCurve:
    """Basis expansion sum_j c_j B_j(t) on [0, 1].

    ``interval`` records the original time span that was mapped onto [0, 1].
    """

    basis: BSplineBasis
    coefficients: np.ndarray
    interval: tuple = field(default=(0.0, 1.0))

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float).ravel().copy()
        if c.size != self.basis.n_basis:
            raise FunctionalDataError(
                f"expected {self.basis.n_basis} coefficients, got {c.size}")
        if not np.all(np.isfinite(c)):
            raise FunctionalDataError("curve coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "interval", tuple(float(v) for v in self.interval))

    def __call__(self, times) -> np.ndarray:
        return evaluate(self, times)

    def derivative(self) -> "FunctionalCurve":
        return differentiate(self)


def _check_times(times) -> np.ndarray:
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if t.ndim != 1:
        t = t.ravel()
    if np.any(~np.isfinite(t)) or np.any(t < -_TIME_TOL) or np.any(t > 1 + _TIME_TOL):
        raise FunctionalDataError("evaluation times must lie in [0, 1]")
    return np.clip(t, 0.0, 1.0)


def evaluate(curve: FunctionalCurve, times) -> np.ndarray:
    """Value of the expansion at each time in [0, 1]."""
    t = _check_times(times)
    spl = BSpline(curve.basis.full_knots, curve.coefficients, curve.basis.degree)
    return spl(t)


def differentiate(curve: FunctionalCurve) -> FunctionalCurve:
    """Exact derivative, expressed in the basis of one lower order."""
    if curve.basis.order < 3:
        raise FunctionalDataError("differentiation requires spline order >= 3")
    coef = curve.basis.derivative_matrix() @ curve.coefficients
    return FunctionalCurve(curve.basis.derived(), coef, curve.interval)


def fit_operator(basis: BSplineBasis, times, penalty: float = DEFAULT_PENALTY) -> np.ndarray:
    """Linear map from sample values at ``times`` to penalized LS coefficients.

    Solves (B'B + penalty * R) c = B'y, with R the roughness matrix.
    """
    if penalty < 0 or not np.isfinite(penalty):
        raise FunctionalDataError("penalty must be a finite nonnegative number")
    t = _check_times(times)
    if t.size < basis.n_basis:
        raise FunctionalDataError(
            f"underdetermined fit: {t.size} samples for {basis.n_basis} basis functions")
    if penalty > 0 and basis.order < 3:
        raise FunctionalDataError("roughness penalty needs spline order >= 3")
    B = basis.design_matrix(t)
    A = B.T @ B
    if penalty > 0:
        A = A + penalty * basis.roughness_matrix()
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise FunctionalDataError("singular normal system in curve fit") from None
    if np.min(np.diag(L)) ** 2 < 1e-13 * np.max(np.diag(L)) ** 2:
        raise FunctionalDataError("singular normal system in curve fit")
    return np.linalg.solve(A, B.T)


def fit_curve(samples, basis: BSplineBasis | None = None,
              penalty: float = DEFAULT_PENALTY, interval=(0.0, 1.0)) -> FunctionalCurve:
    """Penalized least-squares fit of (time, value) samples with times in [0, 1]."""
    basis = basis or BSplineBasis.uniform()
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise FunctionalDataError("samples must be a sequence of (time, value) pairs")
    F = fit_operator(basis, arr[:, 0], penalty)
    return FunctionalCurve(basis, F @ arr[:, 1], interval)


def fit_values(times, values, basis: BSplineBasis | None = None,
               penalty: float = DEFAULT_PENALTY, interval=(0.0, 1.0)) -> FunctionalCurve:
    """Same as ``fit_curve`` but with separate time and value arrays."""
    basis = basis or BSplineBasis.uniform()
    F = fit_operator(basis, times, penalty)
    return FunctionalCurve(basis, F @ np.asarray(values, dtype=float), interval)


class GridSmoother:
    """Cached linear operators for curves sampled on one grid.

    ``smooth`` maps grid values to fitted-curve values on the same grid and
    ``slope`` maps grid values to the fitted curve's derivative on the grid.
    Both act on the last axis, so batches of curves go through unchanged.
    """

    def __init__(self, grid: TimeGrid, basis: BSplineBasis | None = None,
                 penalty: float = DEFAULT_PENALTY):
        self.grid = grid
        self.basis = basis or BSplineBasis.uniform()
        self.penalty = penalty
        self.fit = fit_operator(self.basis, grid.points, penalty)
        E = self.basis.design_matrix(grid.points)
        self.smooth_matrix = E @ self.fit
        if self.basis.order >= 3:
            E1 = self.basis.derived().design_matrix(grid.points)
            self.slope_matrix = E1 @ self.basis.derivative_matrix() @ self.fit
        else:
            self.slope_matrix = None

    def curve(self, values, interval=(0.0, 1.0)) -> FunctionalCurve:
        return FunctionalCurve(self.basis, self.fit @ np.asarray(values, dtype=float), interval)

    def coefficients(self, values) -> np.ndarray:
        return np.asarray(values, dtype=float) @ self.fit.T

    def smooth(self, values) -> np.ndarray:
        return np.asarray(values, dtype=float) @ self.smooth_matrix.T

    def slope(self, values) -> np.ndarray:
        if self.slope_matrix is None:
            raise FunctionalDataError("differentiation requires spline order >= 3")
        return np.asarray(values, dtype=float) @ self.slope_matrix.T


def rescale_times(times: Sequence[float]):
    """Affinely map times onto [0, 1]; returns (unit_times, (t0, t1))."""
    t = np.asarray(times, dtype=float)
    if t.size < 2:
        raise FunctionalDataError("need at least two times to rescale")
    t0, t1 = float(t.min()), float(t.max())
    if t1 <= t0:
        raise FunctionalDataError("times must span a positive interval")
    return (t - t0) / (t1 - t0), (t0, t1)


def read_series_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``time,value`` CSV. Lines starting with '#' are ignored."""
    times, values = [], []
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rows, None)
        if header is None or [h.strip() for h in header[:2]] != ["time", "value"]:
            raise FunctionalDataError(f"{path}: expected header 'time,value'")
        for row in rows:
            if not row:
                continue
            times.append(float(row[0]))
            values.append(float(row[1]))
    order = np.argsort(times, kind="stable")
    return np.asarray(times)[order], np.asarray(values)[order]


def write_series_csv(path, times, values, comment: str | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["time", "value"])
        for t, v in zip(times, values):
            w.writerow([repr(float(t)), repr(float(v))])


def curve_from_csv(path, basis: BSplineBasis | None = None,
                   penalty: float = DEFAULT_PENALTY) -> FunctionalCurve:
    """Read a gauge series, rescale its times to [0, 1] and fit a curve."""
    t, v = read_series_csv(path)
    u, interval = rescale_times(t)
    return fit_values(u, v, basis, penalty, interval)
