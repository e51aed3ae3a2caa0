"""Shared test oracles, implemented independently of the package solvers."""
import numpy as np
from numba import njit

from optregime.penalty import penalty_value
from optregime.solver import DesignMatrix


def random_design(rng, n, p, corr=0.0, intercept=True, scale_to_root_n=True):
    """Random Gaussian design, optionally equicorrelated, columns scaled
    to norm sqrt(n), with a leading all-ones column when requested."""
    Z = rng.standard_normal((n, p))
    if corr:
        shared = rng.standard_normal((n, 1))
        Z = np.sqrt(1.0 - corr) * Z + np.sqrt(corr) * shared
    if scale_to_root_n:
        Z = Z * (np.sqrt(n) / np.linalg.norm(Z, axis=0))
    if intercept:
        Z = np.column_stack([np.ones(n), Z])
    return DesignMatrix(Z, has_intercept=intercept, standardized=scale_to_root_n)


def newton_logistic(X, y, tol=1e-12, max_iter=200):
    """Unpenalized logistic MLE by damped Newton-Raphson on the mean
    negative log-likelihood (1/n) sum [log(1+exp(eta)) - y*eta]."""
    n, p = X.shape
    beta = np.zeros(p)

    def loss(b):
        eta = X @ b
        return float(np.mean(np.logaddexp(0.0, eta) - y * eta))

    cur = loss(beta)
    for _ in range(max_iter):
        eta = X @ beta
        pi = 1.0 / (1.0 + np.exp(-eta))
        grad = X.T @ (pi - y) / n
        H = (X * (pi * (1.0 - pi))[:, None]).T @ X / n
        step = np.linalg.solve(H, grad)
        if float(np.max(np.abs(step))) < tol:
            break
        t = 1.0
        while t > 1e-8:
            cand = beta - t * step
            val = loss(cand)
            if val <= cur + 1e-15:
                beta, cur = cand, val
                break
            t *= 0.5
        else:
            break
    return beta


@njit(cache=True)
def _brute_ls3(G, q, c0, inv_n, grid, pen0, pen1, pen2):
    best = 1e300
    m = grid.size
    for i0 in range(m):
        b0 = grid[i0]
        t0 = G[0, 0] * b0 * b0 - 2.0 * q[0] * b0
        for i1 in range(m):
            b1 = grid[i1]
            t1 = t0 + G[1, 1] * b1 * b1 + 2.0 * G[0, 1] * b0 * b1 - 2.0 * q[1] * b1
            base = pen0[i0] + pen1[i1]
            c02 = G[0, 2] * b0 + G[1, 2] * b1 - q[2]
            for i2 in range(m):
                b2 = grid[i2]
                v = t1 + G[2, 2] * b2 * b2 + 2.0 * c02 * b2
                obj = (c0 + v) * inv_n + base + pen2[i2]
                if obj < best:
                    best = obj
    return best


@njit(cache=True)
def _brute_logistic2(X, y, grid, pen0, pen1):
    best = 1e300
    n = X.shape[0]
    m = grid.size
    for i0 in range(m):
        b0 = grid[i0]
        for i1 in range(m):
            b1 = grid[i1]
            s = 0.0
            for i in range(n):
                eta = X[i, 0] * b0 + X[i, 1] * b1
                if eta > 0.0:
                    s += eta + np.log1p(np.exp(-eta)) - y[i] * eta
                else:
                    s += np.log1p(np.exp(eta)) - y[i] * eta
            obj = s / n + pen0[i0] + pen1[i1]
            if obj < best:
                best = obj
    return best


def _pen_arrays(spec, grid, pen_mask):
    out = []
    absgrid = np.abs(grid)
    vals = np.asarray(penalty_value(spec, absgrid))
    for penalized in pen_mask:
        out.append(vals if penalized else np.zeros_like(grid))
    return out


def brute_force_min_objective(kind, X, y, spec, pen_mask, half_width=2.0, step=1e-2):
    """Global minimum of the penalized objective over a coefficient box,
    by exhaustive grid search at the given resolution."""
    p = X.shape[1]
    m = int(round(2 * half_width / step)) + 1
    grid = -half_width + step * np.arange(m)
    pens = _pen_arrays(spec, grid, pen_mask)
    if kind == "ls":
        assert p == 3
        G = X.T @ X
        q = X.T @ y
        c0 = float(y @ y)
        return float(_brute_ls3(G, q, c0, 1.0 / y.size, grid, pens[0], pens[1], pens[2]))
    assert kind == "logistic" and p == 2
    return float(_brute_logistic2(X, y, grid, pens[0], pens[1]))


def loo_mean_squared_error(X, y):
    """Leave-one-out CV loss of ordinary least squares, by refitting."""
    n = X.shape[0]
    losses = np.empty(n)
    for i in range(n):
        mask = np.ones(n, bool)
        mask[i] = False
        coef, *_ = np.linalg.lstsq(X[mask], y[mask], rcond=None)
        losses[i] = (y[i] - X[i] @ coef) ** 2
    return float(np.mean(losses))
