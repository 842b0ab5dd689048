"""Independent reference implementations used to pin expected values.

Nothing here imports the estimation code under test beyond plain data
containers: the logistic solver is a from-scratch IRLS, and derivative
references come from central finite differences of scalar objectives.
"""

from __future__ import annotations

import numpy as np


def expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def irls_logistic(X, y, penalty=None, beta0=None, max_iter=200, tol=1e-12):
    """Newton/IRLS solver for (optionally Gaussian-penalized) logistic models.

    Maximizes sum(y*eta - log(1+exp(eta))) - 0.5 * beta' P beta with
    eta = X beta. ``penalty`` is a PSD matrix (or None for the plain MLE).
    Returns the coefficient vector; raises if the iteration stalls.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    P = np.zeros((p, p)) if penalty is None else np.asarray(penalty, dtype=np.float64)
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=np.float64).copy()
    for _ in range(max_iter):
        eta = X @ beta
        mu = expit(eta)
        grad = X.T @ (y - mu) - P @ beta
        w = mu * (1.0 - mu)
        H = X.T @ (X * w[:, None]) + P
        step = np.linalg.solve(H, grad)
        # halve until the penalized log likelihood does not decrease
        def value(b):
            e = X @ b
            return float(y @ e - np.logaddexp(0.0, e).sum() - 0.5 * b @ P @ b)

        f0 = value(beta)
        t = 1.0
        for _ in range(50):
            cand = beta + t * step
            if value(cand) >= f0 - 1e-12:
                break
            t *= 0.5
        beta = beta + t * step
        if np.max(np.abs(t * step)) < tol:
            return beta
    raise RuntimeError("IRLS did not converge")


def fd_gradient(f, x, h=1e-5):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def fd_jacobian(grad_fn, x, h=1e-5):
    """Central finite differences of a vector function; used for Hessians."""
    x = np.asarray(x, dtype=np.float64)
    g0 = np.asarray(grad_fn(x))
    J = np.zeros((g0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (np.asarray(grad_fn(x + e)) - np.asarray(grad_fn(x - e))) / (2.0 * h)
    return J


def normal_logpdf(x, mean, sd):
    x = np.asarray(x, dtype=np.float64)
    z = (x - mean) / sd
    return float(np.sum(-0.5 * z * z - np.log(sd) - 0.5 * np.log(2.0 * np.pi)))


def rel_err(a, b):
    """Worst elementwise relative error with an absolute floor of one."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / scale))
