"""Independent reference implementations used to check the library.

These deliberately use different solve paths (dense inverses, finite
differences, brute-force enumeration) than the code under test.
"""

from __future__ import annotations

import numpy as np


def dense_kernel(sf2, lengthscales, A, B):
    """ARD-SE kernel by explicit loops over pairs."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    ls = np.asarray(lengthscales, dtype=float)
    out = np.empty((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        for j in range(B.shape[0]):
            q = np.sum(((A[i] - B[j]) / ls) ** 2)
            out[i, j] = sf2 * np.exp(-0.5 * q)
    return out


def dense_gp_posterior(sf2, lengthscales, sn2, X, y, Xstar, standardize=True):
    """Posterior mean/variance via a dense matrix inverse (no Cholesky).

    Mirrors the model convention: responses standardized per dataset, with
    scale guard, predictions mapped back to the raw scale.
    """
    y = np.asarray(y, dtype=float)
    if standardize:
        mu = float(np.mean(y))
        s = float(np.std(y))
        if not np.isfinite(s) or s < 1e-12:
            s = 1.0
    else:
        mu, s = 0.0, 1.0
    z = (y - mu) / s
    K = dense_kernel(sf2, lengthscales, X, X) + sn2 * np.eye(len(y))
    Kinv = np.linalg.inv(K)
    Ks = dense_kernel(sf2, lengthscales, Xstar, X)
    mean = Ks @ Kinv @ z
    var = np.empty(Ks.shape[0])
    for i in range(Ks.shape[0]):
        var[i] = sf2 - Ks[i] @ Kinv @ Ks[i]
    return mu + s * mean, (s**2) * var


def central_difference_gradient(fn, x, step=1e-5):
    """Central finite differences of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (fn(hi) - fn(lo)) / (2 * step)
    return grad


def ridge_weights(Phi, y, sn2):
    """Closed-form ridge solution (Phi^T Phi + sn2 I)^{-1} Phi^T y by dense inverse."""
    D = Phi.shape[1]
    return np.linalg.inv(Phi.T @ Phi + sn2 * np.eye(D)) @ Phi.T @ y
