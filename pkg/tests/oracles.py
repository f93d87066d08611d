"""Independent reference computations used by the test-suite.

Everything here is deliberately naive: dense matrices, explicit loops,
no shared code with the paths under test beyond the regressor and kernel
definitions (which are checked separately against closed forms).
"""

import math

import numpy as np
from scipy.special import gammaln

from fhm.design_space import ParameterSpace
from fhm.emulator import CovarianceHyper, NigPrior, RegressorSet
from fhm.functional_data import TimeGrid


def dense_kernel(x1, x2, lengths):
    x1 = np.atleast_2d(x1)
    x2 = np.atleast_2d(x2)
    out = np.empty((x1.shape[0], x2.shape[0]))
    for i in range(x1.shape[0]):
        for j in range(x2.shape[0]):
            out[i, j] = math.exp(-sum((abs(a - b) / l) ** 1.5
                                      for a, b, l in zip(x1[i], x2[j], lengths)))
    return out


def dense_nig(Y, G_th, G_t, K_th, K_t, m, V, a, d):
    """Flattened NIG update and log marginal likelihood with dense algebra."""
    N, q = Y.shape
    y = Y.ravel()
    G = np.kron(G_th, G_t)
    K = np.kron(K_th, K_t)
    # solves rather than explicit inverses keep the oracle at least as
    # accurate as the structured path it checks
    KiG = np.linalg.solve(K, G)
    Kiy = np.linalg.solve(K, y)
    Vim = np.linalg.solve(V, m)
    prec = np.linalg.inv(V) + G.T @ KiG
    prec = 0.5 * (prec + prec.T)
    V_post = np.linalg.inv(prec)
    m_post = np.linalg.solve(prec, Vim + G.T @ Kiy)
    a_post = a + N * q / 2
    d_post = d + 0.5 * (y @ Kiy + m @ Vim - m_post @ prec @ m_post)
    # marginal: Student-t with 2a dof, location G m, scale (d/a)(K + G V G')
    S = K + G @ V @ G.T
    r = y - G @ m
    n = N * q
    _, logdet_S = np.linalg.slogdet(S)
    lml = (gammaln(a + n / 2) - gammaln(a) - n / 2 * math.log(2 * math.pi * d)
           - 0.5 * logdet_S - (a + n / 2) * math.log(1 + r @ np.linalg.solve(S, r) / (2 * d)))
    return m_post, V_post, a_post, d_post, lml


def dense_predict(Y, G_th, G_t, K_th, K_t, k_star, g_star, m, V, a, d, jitter):
    """Predictive mean and marginal variance at one new input on the grid.

    Joint covariance over [training; new] is the Kronecker product of the
    augmented input correlation [[K_th, k], [k', 1 + jitter]] with K_t.
    """
    m_post, V_post, a_post, d_post, _ = dense_nig(Y, G_th, G_t, K_th, K_t, m, V, a, d)
    G = np.kron(G_th, G_t)
    K = np.kron(K_th, K_t)
    kx = np.kron(k_star[:, None], K_t)              # (N q) x q
    Gx = np.kron(g_star[None, :], G_t)              # q x nu
    Kikx = np.linalg.solve(K, kx)
    mean = Gx @ m_post + Kikx.T @ (Y.ravel() - G @ m_post)
    H = Gx - Kikx.T @ G
    C = (1 + jitter) * K_t - kx.T @ Kikx + H @ V_post @ H.T
    var = d_post / (a_post - 1) * np.diag(C)
    return mean, var


def brute_band_depth(Y):
    """Modified band depth by explicit enumeration of curve pairs."""
    n, q = Y.shape
    depth = np.zeros(n)
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            lo = np.minimum(Y[i], Y[j])
            hi = np.maximum(Y[i], Y[j])
            depth += np.mean((Y >= lo) & (Y <= hi), axis=1)
            pairs += 1
    return depth / pairs


def scan_shared_uncertainty(dists, emu_vars, idx, target_count, delta, threshold):
    """Literal loop: a += delta until at least target_count members are NROY.

    Two-dimensional inputs (n, G) count a member when its largest
    implausibility over the G columns is below the threshold.
    """
    dist = np.asarray(dists, dtype=float)[idx]
    ev = np.asarray(emu_vars, dtype=float)[idx]
    if dist.ndim == 1:
        dist, ev = dist[:, None], ev[:, None]
    steps = 0
    while True:
        steps += 1
        a = steps * delta
        count = np.sum(np.max(dist / np.sqrt(ev + a), axis=1) < threshold)
        if count >= target_count:
            return a


def dense_scan_extrema(f, n=100_001):
    t = np.linspace(0, 1, n)
    v = f(t)
    return v.max(), t[np.argmax(v)], v.min(), t[np.argmin(v)]


def random_instance(rng, degree=1, order=1):
    """Small random OPE problem: N <= 6 designs, q <= 8 grid points."""
    P = int(rng.integers(1, 4))
    N = int(rng.integers(3, 7))
    q = int(rng.integers(5, 9))
    space = ParameterSpace(tuple(f"p{i}" for i in range(P)), np.zeros(P), np.ones(P))
    X = rng.uniform(size=(N, P))
    grid = TimeGrid(np.r_[0, np.sort(rng.uniform(size=q - 2)), 1])
    reg = RegressorSet(P, input_degree=degree, fourier_order=order)
    nu = reg.n_total
    A = rng.normal(size=(nu, nu))
    prior = NigPrior(rng.normal(size=nu), A @ A.T + np.eye(nu), rng.uniform(1.5, 3),
                     rng.uniform(0.5, 2))
    hyper = CovarianceHyper(rng.uniform(0.3, 2, P), rng.uniform(0.1, 1), 1e-6)
    Y = rng.normal(size=(N, q))
    return space, X, grid, reg, prior, hyper, Y
