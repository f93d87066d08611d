"""Functional boxplots, envelope areas, parameter summaries and file artifacts."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import gaussian_kde

from . import _accel
from .functional_data import TimeGrid


class ReportingError(ValueError):
    pass


def band_depth(curves) -> np.ndarray:
    """Modified band depth (pairs of curves) of each row of an (n, q) array."""
    y = np.atleast_2d(np.asarray(curves, dtype=float))
    if y.shape[0] < 3:
        raise ReportingError("band depth needs at least three curves")
    return _accel.band_depth(y)


@dataclass
class FunctionalBoxplot:
    grid: TimeGrid
    median: np.ndarray
    central_lower: np.ndarray
    central_upper: np.ndarray
    envelope_lower: np.ndarray
    envelope_upper: np.ndarray
    outliers: np.ndarray
    depth: np.ndarray
    n_curves: int

    @property
    def median_index(self) -> int:
        return int(np.argmax(self.depth))

    def envelope_area(self) -> float:
        return band_area(self.envelope_lower, self.envelope_upper, self.grid)

    def central_area(self) -> float:
        return band_area(self.central_lower, self.central_upper, self.grid)

    def coverage(self, truth) -> float:
        """Fraction of grid points where ``truth`` lies inside the envelope."""
        v = np.asarray(truth, dtype=float)
        inside = (v >= self.envelope_lower - 1e-12) & (v <= self.envelope_upper + 1e-12)
        return float(np.mean(inside))


def functional_boxplot(curves, grid: TimeGrid, factor: float = 1.5) -> FunctionalBoxplot:
    """Depth-ordered summary of a set of curves sampled on ``grid``.

    The central region is the pointwise envelope of the deepest half;
    curves leaving the central region inflated by ``factor`` times its
    range at any grid point are flagged as outliers, and the envelope is
    taken over the remaining curves.
    """
    y = np.atleast_2d(np.asarray(curves, dtype=float))
    n, q = y.shape
    if q != grid.count:
        raise ReportingError("curves do not match the grid")
    if n < 4:
        raise ReportingError(f"functional boxplot needs at least four curves, got {n}")
    depth = band_depth(y)
    order = np.argsort(-depth, kind="stable")
    central = y[order[:int(math.ceil(n / 2))]]
    lo, hi = central.min(axis=0), central.max(axis=0)
    rng = hi - lo
    fence_lo, fence_hi = lo - factor * rng, hi + factor * rng
    out = np.any((y < fence_lo - 1e-12) | (y > fence_hi + 1e-12), axis=1)
    keep = y[~out]
    return FunctionalBoxplot(grid, y[order[0]].copy(), lo, hi, keep.min(axis=0),
                             keep.max(axis=0), np.flatnonzero(out), depth, n)


def envelope_area(curves, grid: TimeGrid) -> float:
    """Trapezoid integral of the pointwise range (max - min) of a set of curves."""
    y = np.atleast_2d(np.asarray(curves, dtype=float))
    if y.shape[0] < 1 or y.shape[1] != grid.count:
        raise ReportingError("need at least one curve sampled on the grid")
    return band_area(y.min(axis=0), y.max(axis=0), grid)


def envelope_coverage(curves, truth) -> float:
    """Fraction of grid points where ``truth`` lies within the pointwise range of ``curves``."""
    y = np.atleast_2d(np.asarray(curves, dtype=float))
    v = np.asarray(truth, dtype=float)
    return float(np.mean((v >= y.min(axis=0) - 1e-12) & (v <= y.max(axis=0) + 1e-12)))


def band_area(lower, upper, grid: TimeGrid) -> float:
    """Trapezoid integral of upper - lower over the grid."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(upper < lower - 1e-12):
        raise ReportingError("upper envelope lies below the lower one")
    return float(np.dot(grid.trapezoid_weights(), upper - lower))


@dataclass
class ParameterSummary:
    name: str
    lower: float
    upper: float
    q1: float
    median: float
    q3: float
    minimum: float
    maximum: float
    support: np.ndarray
    density: np.ndarray


def parameter_summary(points, names, bounds=None, n_support: int = 101) -> list:
    """Quartiles and a kernel density per parameter (violin-plot data)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise ReportingError("empty NROY set")
    out = []
    for i, name in enumerate(names):
        x = pts[:, i]
        lo, hi = (bounds[i] if bounds is not None else (x.min(), x.max()))
        support = np.linspace(lo, hi, n_support)
        if x.size > 1 and np.ptp(x) > 0:
            dens = gaussian_kde(x)(support)
        else:
            dens = np.zeros(n_support)
        q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
        out.append(ParameterSummary(name, float(lo), float(hi), float(q1), float(med), float(q3),
                                    float(x.min()), float(x.max()), support, dens))
    return out


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def _header(fh, comment):
    if comment:
        for line in str(comment).splitlines():
            fh.write(f"# {line}\n")


def write_forecast_bands(path, box: FunctionalBoxplot, truth=None, times=None,
                         comment: str | None = None) -> None:
    t = box.grid.points if times is None else np.asarray(times, dtype=float)
    with open(path, "w", newline="") as fh:
        _header(fh, comment)
        w = csv.writer(fh)
        cols = ["time", "median", "central_lower", "central_upper", "envelope_lower",
                "envelope_upper"]
        if truth is not None:
            cols.append("truth")
        w.writerow(cols)
        for j in range(box.grid.count):
            row = [t[j], box.median[j], box.central_lower[j], box.central_upper[j],
                   box.envelope_lower[j], box.envelope_upper[j]]
            if truth is not None:
                row.append(truth[j])
            w.writerow([repr(float(v)) for v in row])


def write_violin(directory, summaries, comment: str | None = None) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in summaries:
        p = directory / f"violin_{s.name}.csv"
        with open(p, "w", newline="") as fh:
            _header(fh, comment)
            fh.write(f"# quartiles q1={s.q1!r} median={s.median!r} q3={s.q3!r} "
                     f"min={s.minimum!r} max={s.maximum!r}\n")
            w = csv.writer(fh)
            w.writerow(["value", "density"])
            for x, d in zip(s.support, s.density):
                w.writerow([repr(float(x)), repr(float(d))])
        paths.append(p)
    return paths


def write_comparison(path, rows, comment: str | None = None) -> None:
    """``rows``: dicts with method, nroy_count, envelope_area, truth_coverage."""
    cols = ["method", "nroy_count", "envelope_area", "truth_coverage"]
    with open(path, "w", newline="") as fh:
        _header(fh, comment)
        w = csv.DictWriter(fh, cols, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def boxplot_svg(box: FunctionalBoxplot, curves=None, truth=None, title: str = "",
                width: int = 640, height: int = 360) -> str:
    """Static SVG of a functional boxplot, optionally with outlier curves and truth."""
    t = box.grid.points
    parts = [box.envelope_lower, box.envelope_upper]
    if truth is not None:
        parts.append(np.asarray(truth, dtype=float))
    if curves is not None and box.outliers.size:
        parts.append(np.asarray(curves)[box.outliers].ravel())
    ymin = min(float(np.min(p)) for p in parts)
    ymax = max(float(np.max(p)) for p in parts)
    if ymax <= ymin:
        ymax = ymin + 1.0
    pad = 40

    def xy(x, y):
        px = pad + (x - t[0]) / (t[-1] - t[0] or 1.0) * (width - 2 * pad)
        py = height - pad - (y - ymin) / (ymax - ymin) * (height - 2 * pad)
        return f"{px:.2f},{py:.2f}"

    def line(y):
        return " ".join(xy(a, b) for a, b in zip(t, y))

    def band(lo, hi):
        pts = [xy(a, b) for a, b in zip(t, hi)] + [xy(a, b) for a, b in zip(t[::-1], lo[::-1])]
        return " ".join(pts)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{pad}" y="{pad / 2:.0f}" font-family="sans-serif" '
                   f'font-size="14">{title}</text>')
    out.append(f'<polygon points="{band(box.central_lower, box.central_upper)}" '
               'fill="#7aa6d8" fill-opacity="0.6" stroke="none"/>')
    for env in (box.envelope_lower, box.envelope_upper):
        out.append(f'<polyline points="{line(env)}" fill="none" stroke="#1f4e9a" '
                   'stroke-width="1"/>')
    if curves is not None:
        for i in box.outliers:
            out.append(f'<polyline points="{line(np.asarray(curves)[i])}" fill="none" '
                       'stroke="#c0392b" stroke-width="0.8" stroke-dasharray="4,3"/>')
    out.append(f'<polyline points="{line(box.median)}" fill="none" stroke="black" '
               'stroke-width="1.2"/>')
    if truth is not None:
        out.append(f'<polyline points="{line(truth)}" fill="none" stroke="#e67e22" '
                   'stroke-width="1.5"/>')
    out.append(f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
               'stroke="black"/>')
    out.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>')
    out.append(f'<text x="{pad}" y="{height - pad / 3:.0f}" font-family="sans-serif" '
               f'font-size="11">{t[0]:g}</text>')
    out.append(f'<text x="{width - pad}" y="{height - pad / 3:.0f}" font-family="sans-serif" '
               f'font-size="11" text-anchor="end">{t[-1]:g}</text>')
    out.append(f'<text x="{pad - 4}" y="{pad}" font-family="sans-serif" font-size="11" '
               f'text-anchor="end">{ymax:.3g}</text>')
    out.append(f'<text x="{pad - 4}" y="{height - pad}" font-family="sans-serif" '
               f'font-size="11" text-anchor="end">{ymin:.3g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, box: FunctionalBoxplot, curves=None, truth=None, title: str = "") -> None:
    Path(path).write_text(boxplot_svg(box, curves, truth, title))
