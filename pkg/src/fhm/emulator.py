"""Outer product emulator (OPE) for curves on a shared time grid.

Training outputs Y (N designs x q grid points) are modelled as

    vec(Y) | beta, tau ~ N(G beta, tau * K_theta (x) K_t),
    beta | tau ~ N(m, tau V),    tau ~ IG(a, d),

with G = G_theta (x) G_t the outer product of Legendre input regressors
and Fourier output regressors, and vec() the row-major flattening.  The
posterior and the predictive distribution are computed through the
Kronecker factors; no (N q) x (N q) matrix is ever formed.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg as sla
from scipy.special import gammaln

from . import _accel
from .design_space import ParameterSpace, unit_coords
from .functional_data import FunctionalCurve, GridSmoother, TimeGrid

KERNEL_EXPONENT = 1.5
JITTER_MAX = 1e-4


class EmulatorError(ValueError):
    pass


# ---------------------------------------------------------------------------
# covariance kernels
# ---------------------------------------------------------------------------

def _check_lengths(lengths):
    lam = np.atleast_1d(np.asarray(lengths, dtype=float))
    if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise EmulatorError("correlation lengths must be positive and finite")
    return lam


def kernel_theta(theta, theta_prime, lengths) -> float:
    """prod_k exp(-(|theta_k - theta'_k| / lengths_k)^(3/2))."""
    lam = _check_lengths(lengths)
    d = np.abs(np.atleast_1d(np.asarray(theta, float) - np.asarray(theta_prime, float))) / lam
    return float(np.exp(-np.sum(d ** KERNEL_EXPONENT)))


def kernel_t(t, t_prime, length) -> float:
    lam = _check_lengths(length)
    if lam.size != 1:
        raise EmulatorError("output correlation length is a scalar")
    return float(np.exp(-(abs(float(t) - float(t_prime)) / lam[0]) ** KERNEL_EXPONENT))


def corr_matrix(x1, x2, lengths) -> np.ndarray:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.ndim == 1:
        x1, x2 = x1[:, None], x2[:, None]
    lam = _check_lengths(lengths)
    if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(x2))):
        raise EmulatorError("non-finite inputs in kernel distances")
    return _accel.powexp_corr(x1, x2, lam)


# ---------------------------------------------------------------------------
# regressors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegressorSet:
    """Legendre polynomials of total degree <= ``input_degree`` in the inputs,
    outer-multiplied with a Fourier series of ``fourier_order`` harmonics in
    time (constant, then sin/cos per harmonic)."""

    n_inputs: int
    input_degree: int = 2
    fourier_order: int = 2

    def exponents(self) -> list:
        """Per-term degree tuples, constant first then by total degree."""
        terms = []
        for total in range(self.input_degree + 1):
            level = [e for e in itertools.product(range(total + 1), repeat=self.n_inputs)
                     if sum(e) == total]
            terms.extend(sorted(level, reverse=True))
        return terms

    @property
    def n_theta(self) -> int:
        return len(self.exponents())

    @property
    def n_t(self) -> int:
        return 1 + 2 * self.fourier_order

    @property
    def n_total(self) -> int:
        return self.n_theta * self.n_t

    def input_matrix(self, unit_points) -> np.ndarray:
        u = np.atleast_2d(np.asarray(unit_points, dtype=float))
        if u.shape[1] != self.n_inputs:
            raise EmulatorError(f"expected {self.n_inputs} inputs, got {u.shape[1]}")
        # P_k(u) for k = 0..degree, per input
        leg = np.stack([np.polynomial.legendre.legval(u, np.eye(self.input_degree + 1)[k])
                        for k in range(self.input_degree + 1)], axis=-1)
        cols = []
        for e in self.exponents():
            col = np.ones(u.shape[0])
            for j, k in enumerate(e):
                if k:
                    col = col * leg[:, j, k]
            cols.append(col)
        return np.stack(cols, axis=1)

    def output_matrix(self, times) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        cols = [np.ones_like(t)]
        for k in range(1, self.fourier_order + 1):
            cols.append(np.sin(2 * np.pi * k * t))
            cols.append(np.cos(2 * np.pi * k * t))
        return np.stack(cols, axis=1)


@dataclass(frozen=True)
class CovarianceHyper:
    lengths_theta: np.ndarray
    length_t: float
    jitter: float = 1e-8

    def __post_init__(self):
        lam = _check_lengths(self.lengths_theta).copy()
        _check_lengths(self.length_t)
        if self.jitter < 0:
            raise EmulatorError("jitter must be nonnegative")
        lam.setflags(write=False)
        object.__setattr__(self, "lengths_theta", lam)
        object.__setattr__(self, "length_t", float(self.length_t))
        object.__setattr__(self, "jitter", float(self.jitter))


@dataclass(frozen=True)
class NigPrior:
    m: np.ndarray
    V: np.ndarray
    a: float = 2.0
    d: float = 1.0

    @classmethod
    def default(cls, n_total: int, scale: float = 100.0, a: float = 2.0, d: float = 1.0):
        return cls(np.zeros(n_total), scale * np.eye(n_total), a, d)


@dataclass(frozen=True)
class NigPosterior:
    m: np.ndarray
    V: np.ndarray
    a: float
    d: float


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _chol_with_jitter(K0, jitter):
    """Cholesky of K0 + jitter*I, escalating jitter x10 up to JITTER_MAX."""
    n = K0.shape[0]
    jit = jitter
    while True:
        try:
            return sla.cholesky(K0 + jit * np.eye(n), lower=True), jit
        except np.linalg.LinAlgError:
            jit = max(jit * 10, 1e-12)
            if jit > JITTER_MAX * (1 + 1e-9):
                raise EmulatorError("covariance factorization failed even at maximal jitter") \
                    from None


@dataclass
class _Factors:
    L_theta: np.ndarray
    L_t: np.ndarray
    jitter: float
    logdet_theta: float
    logdet_t: float


def _factorize(U, t, hyper: CovarianceHyper) -> _Factors:
    Kth0 = corr_matrix(U, U, hyper.lengths_theta)
    Kt0 = corr_matrix(t, t, [hyper.length_t])
    jit = hyper.jitter
    while True:
        Lth, jit_th = _chol_with_jitter(Kth0, jit)
        Lt, jit_t = _chol_with_jitter(Kt0, jit_th)
        if jit_t == jit_th:
            break
        jit = jit_t
    return _Factors(Lth, Lt, jit_t, 2 * np.sum(np.log(np.diag(Lth))),
                    2 * np.sum(np.log(np.diag(Lt))))


def _cho(L, B):
    return sla.cho_solve((L, True), B)


def _nig_update(Y, G_th, G_t, f: _Factors, prior: NigPrior, regressors: RegressorSet):
    N, q = Y.shape
    KiG_th = _cho(f.L_theta, G_th)
    KiG_t = _cho(f.L_t, G_t)
    A_th = G_th.T @ KiG_th
    A_t = G_t.T @ KiG_t
    KiY = _cho(f.L_t, _cho(f.L_theta, Y).T).T          # K_th^-1 Y K_t^-1
    GtKy = (G_th.T @ KiY @ G_t).ravel()
    Vinv = np.linalg.inv(prior.V)
    Vinv = (Vinv + Vinv.T) / 2
    prec = Vinv + np.kron(A_th, A_t)
    try:
        Lp = sla.cholesky(prec, lower=True)
    except np.linalg.LinAlgError:
        blocks = []
        if np.linalg.matrix_rank(G_th) < G_th.shape[1]:
            blocks.append(f"input regressors (rank {np.linalg.matrix_rank(G_th)} "
                          f"< {G_th.shape[1]})")
        if np.linalg.matrix_rank(G_t) < G_t.shape[1]:
            blocks.append(f"output regressors (rank {np.linalg.matrix_rank(G_t)} "
                          f"< {G_t.shape[1]})")
        raise EmulatorError("singular posterior precision; rank-deficient "
                            + (" and ".join(blocks) or "regressor block")) from None
    Vinv_m = Vinv @ prior.m
    m_post = _cho(Lp, Vinv_m + GtKy)
    V_post = _cho(Lp, np.eye(prec.shape[0]))
    V_post = (V_post + V_post.T) / 2
    quad = float(np.sum(Y * KiY) + prior.m @ Vinv_m - m_post @ (prec @ m_post))
    a_post = prior.a + N * q / 2
    d_post = prior.d + max(quad, 0.0) / 2
    logdet_prec = 2 * np.sum(np.log(np.diag(Lp)))
    sign, logdet_V = np.linalg.slogdet(prior.V)
    lml = (-0.5 * N * q * math.log(2 * math.pi)
           - 0.5 * (q * f.logdet_theta + N * f.logdet_t)
           - 0.5 * logdet_V - 0.5 * logdet_prec
           + prior.a * math.log(prior.d) - a_post * math.log(d_post)
           + gammaln(a_post) - gammaln(prior.a))
    return NigPosterior(m_post, V_post, a_post, d_post), KiY, lml


def log_marginal_likelihood(Y, unit_design, grid: TimeGrid, hyper: CovarianceHyper,
                            regressors: RegressorSet, prior: NigPrior) -> float:
    Y = np.asarray(Y, dtype=float)
    f = _factorize(unit_design, grid.points, hyper)
    G_th = regressors.input_matrix(unit_design)
    G_t = regressors.output_matrix(grid.points)
    return _nig_update(Y, G_th, G_t, f, prior, regressors)[2]


class OpeModel:
    """Trained emulator for one gauge.  Immutable once built."""

    def __init__(self, space: ParameterSpace, design, grid: TimeGrid, Y,
                 regressors: RegressorSet, hyper: CovarianceHyper, prior: NigPrior,
                 smoother: GridSmoother | None = None, meta: dict | None = None):
        self.space = space
        self.design = np.array(design, dtype=float)
        self.grid = grid
        self.Y = np.array(Y, dtype=float)
        if self.Y.shape != (self.design.shape[0], grid.count):
            raise EmulatorError(
                f"training outputs must be N x q = {self.design.shape[0]} x {grid.count}, "
                f"got {self.Y.shape}")
        self.regressors = regressors
        self.prior = prior
        self.smoother = smoother
        self.meta = dict(meta or {})
        self.unit_design = unit_coords(space, self.design)
        f = _factorize(self.unit_design, grid.points, hyper)
        self.hyper = CovarianceHyper(hyper.lengths_theta, hyper.length_t, f.jitter)
        self._f = f
        self.G_theta = regressors.input_matrix(self.unit_design)
        self.G_t = regressors.output_matrix(grid.points)
        self.posterior, _, self.log_marginal = _nig_update(
            self.Y, self.G_theta, self.G_t, f, prior, regressors)
        nth, nt = regressors.n_theta, regressors.n_t
        self._B = self.posterior.m.reshape(nth, nt)
        resid = self.Y - self.G_theta @ self._B @ self.G_t.T
        self._alpha = _cho(f.L_theta, resid)              # K_th^-1 (Y - G m*)
        self._KiG_theta = _cho(f.L_theta, self.G_theta)
        self._V4 = self.posterior.V.reshape(nth, nt, nth, nt)
        self._scale = self.posterior.d / (self.posterior.a - 1.0)

    # -- pieces of the predictive -------------------------------------------------

    def _terms(self, theta):
        u = unit_coords(self.space, np.atleast_2d(np.asarray(theta, dtype=float)))
        if not np.all(np.isfinite(u)):
            raise EmulatorError("non-finite candidate inputs")
        k = corr_matrix(u, self.unit_design, self.hyper.lengths_theta)
        g = self.regressors.input_matrix(u)
        return u, k, g

    def _reg_cov(self, k, g):
        """Per-row residual GP factor and regression-uncertainty matrix (n_t x n_t)."""
        Kik = _cho(self._f.L_theta, k.T).T
        s = np.sum(k * Kik, axis=1)
        gp_factor = np.maximum(1.0 + self.hyper.jitter - s, 0.0)
        w = g - Kik @ self.G_theta
        M = np.einsum("ni,iakb,nk->nab", w, self._V4, w, optimize=True)
        return gp_factor, M

    def extrapolating(self, theta) -> np.ndarray:
        return ~self.space.contains(theta, tol=1e-12)

    def predict_mean_values(self, theta) -> np.ndarray:
        """Predictive mean on the training grid, shape (n, q)."""
        _, k, g = self._terms(theta)
        return g @ self._B @ self.G_t.T + k @ self._alpha

    def predict_var_values(self, theta) -> np.ndarray:
        """Marginal Student-t predictive variance on the grid, shape (n, q)."""
        _, k, g = self._terms(theta)
        gp_factor, M = self._reg_cov(k, g)
        Kt = self._Kt()
        reg = np.einsum("qa,nab,qb->nq", self.G_t, M, self.G_t, optimize=True)
        return self._scale * (gp_factor[:, None] * np.diag(Kt)[None, :] + reg)

    def predict_cov(self, theta) -> np.ndarray:
        """Full q x q predictive covariance at a single input."""
        _, k, g = self._terms(theta)
        gp_factor, M = self._reg_cov(k, g)
        C = gp_factor[0] * self._Kt() + self.G_t @ M[0] @ self.G_t.T
        return self._scale * C

    def _Kt(self):
        L = self._f.L_t
        return L @ L.T

    def predict_mean(self, theta) -> FunctionalCurve:
        vals = self.predict_mean_values(theta)[0]
        return self._as_curve(vals)

    def predict_var(self, theta) -> np.ndarray:
        return self.predict_var_values(theta)[0]

    def _as_curve(self, vals):
        if self.smoother is None:
            self.smoother = GridSmoother(self.grid)
        return self.smoother.curve(vals, tuple(self.meta.get("interval", (0.0, 1.0))))

    def sample_values(self, theta, n_samples: int, rng) -> np.ndarray:
        """Joint predictive draws on the grid, shape (n, n_samples, q).

        tau ~ IG(a*, d*) per draw, then a Gaussian curve with covariance
        tau * [c_gp * K_t + G_t M G_t'], drawn as the sum of two independent
        Gaussian parts.
        """
        if n_samples < 1:
            raise EmulatorError("n_samples must be >= 1")
        rng = np.random.default_rng(rng)
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        _, k, g = self._terms(theta)
        mean = g @ self._B @ self.G_t.T + k @ self._alpha
        gp_factor, M = self._reg_cov(k, g)
        n, q = mean.shape
        nt = self.regressors.n_t
        # symmetric square roots; M can be numerically singular
        evals, evecs = np.linalg.eigh(M)
        roots = evecs * np.sqrt(np.clip(evals, 0.0, None))[:, None, :]
        tau = self.posterior.d / rng.gamma(self.posterior.a, 1.0, size=(n, n_samples))
        z1 = rng.standard_normal((n, n_samples, q))
        z2 = rng.standard_normal((n, n_samples, nt))
        gp_part = (z1 @ self._f.L_t.T) * np.sqrt(gp_factor)[:, None, None]
        reg_part = np.einsum("nsa,nba,qb->nsq", z2, roots, self.G_t, optimize=True)
        return mean[:, None, :] + np.sqrt(tau)[:, :, None] * (gp_part + reg_part)

    def sample_curves(self, theta, n_samples: int, seed: int = 0) -> list:
        draws = self.sample_values(np.atleast_2d(theta)[:1], n_samples, seed)[0]
        return [self._as_curve(v) for v in draws]

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "fhm-ope/1",
            "space": self.space.to_dict(),
            "design": self.design.tolist(),
            "grid": self.grid.points.tolist(),
            "outputs": self.Y.tolist(),
            "regressors": {"n_inputs": self.regressors.n_inputs,
                           "input_degree": self.regressors.input_degree,
                           "fourier_order": self.regressors.fourier_order},
            "hyper": {"lengths_theta": self.hyper.lengths_theta.tolist(),
                      "length_t": self.hyper.length_t, "jitter": self.hyper.jitter},
            "prior": {"m": self.prior.m.tolist(), "V": self.prior.V.tolist(),
                      "a": self.prior.a, "d": self.prior.d},
            "posterior": {"m": self.posterior.m.tolist(), "V": self.posterior.V.tolist(),
                          "a": self.posterior.a, "d": self.posterior.d},
            "log_marginal": self.log_marginal,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict, smoother: GridSmoother | None = None) -> "OpeModel":
        if data.get("format") != "fhm-ope/1":
            raise EmulatorError("not an OPE model file")
        r = data["regressors"]
        h = data["hyper"]
        p = data["prior"]
        model = cls(ParameterSpace.from_dict(data["space"]), data["design"],
                    TimeGrid(data["grid"]), data["outputs"],
                    RegressorSet(r["n_inputs"], r["input_degree"], r["fourier_order"]),
                    CovarianceHyper(h["lengths_theta"], h["length_t"], h["jitter"]),
                    NigPrior(np.asarray(p["m"]), np.asarray(p["V"]), p["a"], p["d"]),
                    smoother, data.get("meta"))
        return model

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path, smoother: GridSmoother | None = None) -> "OpeModel":
        return cls.from_dict(json.loads(Path(path).read_text()), smoother)


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------

THETA_LENGTH_GRID = np.geomspace(0.1, 10.0, 7)
T_LENGTH_GRID = np.geomspace(0.005, 0.5, 7)


def fit_hyper(Y, space: ParameterSpace, design, grid: TimeGrid,
              regressors: RegressorSet | None = None, prior: NigPrior | None = None,
              jitter: float = 1e-8, theta_grid=THETA_LENGTH_GRID, t_grid=T_LENGTH_GRID,
              sweeps: int = 2) -> CovarianceHyper:
    """Coordinate-descent maximization of the NIG marginal likelihood over
    log-spaced candidate correlation lengths."""
    U = unit_coords(space, np.asarray(design, dtype=float))
    P = U.shape[1]
    regressors = regressors or RegressorSet(P)
    prior = prior or NigPrior.default(regressors.n_total)
    Y = np.asarray(Y, dtype=float)
    lam = np.full(P, theta_grid[len(theta_grid) // 2])
    lt = t_grid[len(t_grid) // 2]

    def score(lam_, lt_):
        try:
            return log_marginal_likelihood(Y, U, grid, CovarianceHyper(lam_, lt_, jitter),
                                           regressors, prior)
        except EmulatorError:
            return -np.inf

    best = score(lam, lt)
    for _ in range(sweeps):
        for dim in range(P + 1):
            options = t_grid if dim == P else theta_grid
            for v in options:
                trial_lam, trial_lt = lam.copy(), lt
                if dim == P:
                    trial_lt = v
                else:
                    trial_lam[dim] = v
                s = score(trial_lam, trial_lt)
                if s > best:
                    best, lam, lt = s, trial_lam, trial_lt
    return CovarianceHyper(lam, lt, jitter)


def train(Y, space: ParameterSpace, design, grid: TimeGrid,
          regressors: RegressorSet | None = None, hyper: CovarianceHyper | None = None,
          prior: NigPrior | None = None, smoother: GridSmoother | None = None,
          meta: dict | None = None) -> OpeModel:
    """Conjugate NIG update of the OPE; fits correlation lengths when ``hyper`` is None."""
    design = np.atleast_2d(np.asarray(design, dtype=float))
    regressors = regressors or RegressorSet(design.shape[1])
    prior = prior or NigPrior.default(regressors.n_total)
    if prior.m.shape != (regressors.n_total,) or prior.V.shape != (regressors.n_total,) * 2:
        raise EmulatorError("prior dimensions do not match the regressor count")
    if hyper is None:
        hyper = fit_hyper(Y, space, design, grid, regressors, prior)
    return OpeModel(space, design, grid, Y, regressors, hyper, prior, smoother, meta)
