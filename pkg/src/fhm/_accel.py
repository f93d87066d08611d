"""Hot inner loops.

Each kernel exists twice: a numba ``@njit`` version and a plain numpy
version with identical semantics.  The numba path is used by default; set
``FHM_DISABLE_NUMBA=1`` in the environment (before import) to force the
numpy path.  ``benchmarks/bench_kernels.py`` times both.
"""

import os

import numpy as np

_flag = os.environ.get("FHM_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = _flag not in ("1", "true", "yes", "on")

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    USE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


# ---------------------------------------------------------------------------
# powered-exponential correlation, exponent 3/2
# ---------------------------------------------------------------------------

def powexp_corr_numpy(x1, x2, lengths):
    """Correlation matrix prod_k exp(-(|x1_k - x2_k| / l_k)^1.5).

    ``x1`` is (n1, p), ``x2`` is (n2, p), ``lengths`` is (p,).
    """
    diff = np.abs(x1[:, None, :] - x2[None, :, :]) / lengths
    return np.exp(-np.sum(diff * np.sqrt(diff), axis=2))


@njit(cache=True)
def powexp_corr_numba(x1, x2, lengths):
    n1, p = x1.shape
    n2 = x2.shape[0]
    out = np.empty((n1, n2))
    for i in range(n1):
        for j in range(n2):
            s = 0.0
            for k in range(p):
                d = abs(x1[i, k] - x2[j, k]) / lengths[k]
                s += d * np.sqrt(d)
            out[i, j] = np.exp(-s)
    return out


# ---------------------------------------------------------------------------
# ensemble-averaged absolute projected difference
# ---------------------------------------------------------------------------

def mean_abs_diff_numpy(proj, ref):
    """Row-wise mean of |proj[i, m] - ref[m]| over m."""
    return np.mean(np.abs(proj - ref[None, :]), axis=1)


@njit(cache=True)
def mean_abs_diff_numba(proj, ref):
    n, m = proj.shape
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(m):
            s += abs(proj[i, j] - ref[j])
        out[i] = s / m
    return out


# ---------------------------------------------------------------------------
# modified band depth (pair bands)
# ---------------------------------------------------------------------------

def band_depth_numpy(y):
    """Modified band depth of each row of ``y`` (n curves x q grid points).

    Counts, per grid point, how many unordered pairs of curves envelope the
    value: all pairs minus pairs lying strictly below or strictly above.
    """
    n = y.shape[0]
    order = np.sort(y, axis=0)
    n_pairs = n * (n - 1) / 2.0
    below = np.empty_like(y)
    above = np.empty_like(y)
    for t in range(y.shape[1]):
        col = order[:, t]
        below[:, t] = np.searchsorted(col, y[:, t], side="left")
        above[:, t] = n - np.searchsorted(col, y[:, t], side="right")
    inside = n_pairs - below * (below - 1) / 2.0 - above * (above - 1) / 2.0
    return np.mean(inside, axis=1) / n_pairs


@njit(cache=True)
def band_depth_numba(y):
    n, q = y.shape
    n_pairs = n * (n - 1) / 2.0
    out = np.zeros(n)
    for t in range(q):
        col = np.sort(y[:, t])
        for i in range(n):
            v = y[i, t]
            below = np.searchsorted(col, v, side="left")
            above = n - np.searchsorted(col, v, side="right")
            out[i] += n_pairs - below * (below - 1) / 2.0 - above * (above - 1) / 2.0
    for i in range(n):
        out[i] /= q * n_pairs
    return out


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def powexp_corr(x1, x2, lengths):
    impl = powexp_corr_numba if USE_NUMBA else powexp_corr_numpy
    return impl(_f64(x1), _f64(x2), _f64(lengths))


def mean_abs_diff(proj, ref):
    impl = mean_abs_diff_numba if USE_NUMBA else mean_abs_diff_numpy
    return impl(_f64(proj), _f64(ref))


def band_depth(y):
    impl = band_depth_numba if USE_NUMBA else band_depth_numpy
    return impl(_f64(y))


def backend():
    return "numba" if USE_NUMBA else "numpy"
