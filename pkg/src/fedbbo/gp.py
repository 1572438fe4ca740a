"""Exact Gaussian-process regression with an ARD squared-exponential kernel.

The posterior object caches a Cholesky factorization of the noisy Gram
matrix, so fitting costs O(n^3) once and each prediction O(n) afterwards.
Responses are standardized to zero mean and unit variance per dataset before
fitting (and mapped back at prediction time), which keeps hyperparameters on
a comparable scale across agents; pass ``standardize=False`` for raw-scale
semantics.

Hyperparameter gradients are taken with respect to log-parameters, so
positivity never needs explicit constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .domain import Dataset

__all__ = [
    "GPHyperparams",
    "GPPosterior",
    "GPFitError",
    "kernel",
    "kernel_eval",
    "gp_fit",
    "gp_predict",
    "gp_sample_joint",
    "gp_log_marginal_likelihood",
]

#: Jitter ladder applied to the Gram diagonal on factorization failure.
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)

LOG2PI = np.log(2.0 * np.pi)


class GPFitError(RuntimeError):
    """Raised when the noisy Gram matrix is not positive definite even after
    the maximum jitter."""


@dataclass(frozen=True)
class GPHyperparams:
    """ARD squared-exponential hyperparameters.

    Parameters
    ----------
    signal_variance : float
        Kernel amplitude sigma_f^2, strictly positive.
    lengthscales : array_like, shape (d,)
        Per-dimension lengthscales, strictly positive.
    noise_variance : float
        Observation noise variance, nonnegative.
    """

    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be > 0")
        if not np.all(ls > 0):
            raise ValueError("lengthscales must be > 0")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def with_dim(self, d: int) -> "GPHyperparams":
        """Broadcast a scalar lengthscale to d dimensions."""
        if self.dim == d:
            return self
        if self.dim == 1:
            return GPHyperparams(
                self.signal_variance,
                np.full(d, self.lengthscales[0]),
                self.noise_variance,
            )
        raise ValueError(f"lengthscales have dim {self.dim}, expected {d}")

    def to_log_vector(self) -> np.ndarray:
        """Pack as [log sigma_f^2, log l_1..l_d, log sigma_n^2]."""
        if self.noise_variance <= 0:
            raise ValueError("log-vector form requires noise_variance > 0")
        return np.concatenate(
            [
                [np.log(self.signal_variance)],
                np.log(self.lengthscales),
                [np.log(self.noise_variance)],
            ]
        )

    @classmethod
    def from_log_vector(cls, v: np.ndarray) -> "GPHyperparams":
        v = np.asarray(v, dtype=float)
        if v.size < 3:
            raise ValueError("log vector needs at least 3 entries")
        return cls(np.exp(v[0]), np.exp(v[1:-1]), np.exp(v[-1]))


def kernel(h: GPHyperparams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """ARD-SE cross-covariance matrix between row sets A (n, d) and B (m, d)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError("design dimensions differ")
    ls = h.with_dim(A.shape[1]).lengthscales
    d2 = cdist(A / ls, B / ls, metric="sqeuclidean")
    return h.signal_variance * np.exp(-0.5 * d2)


def kernel_eval(h: GPHyperparams, a, b) -> float:
    """Kernel value sigma_f^2 * exp(-0.5 * sum_j (a_j - b_j)^2 / l_j^2)."""
    a = np.asarray(a, dtype=float).reshape(1, -1)
    b = np.asarray(b, dtype=float).reshape(1, -1)
    if a.shape != b.shape:
        raise ValueError("design dimensions differ")
    return float(kernel(h, a, b)[0, 0])


def _standardize(y: np.ndarray, enabled: bool) -> tuple[np.ndarray, float, float]:
    if not enabled or y.size == 0:
        return y, 0.0, 1.0
    mean = float(np.mean(y))
    scale = float(np.std(y))
    if not np.isfinite(scale) or scale < 1e-12:
        scale = 1.0
    return (y - mean) / scale, mean, scale


def _chol_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky of K with the jitter ladder; returns (lower factor, jitter)."""
    n = K.shape[0]
    for jitter in JITTER_LADDER:
        try:
            L = linalg.cholesky(K + jitter * np.eye(n), lower=True)
            return L, jitter
        except linalg.LinAlgError:
            continue
    cond = float(np.linalg.cond(K))
    raise GPFitError(
        f"Gram matrix not positive definite after jitter {JITTER_LADDER[-1]:g} "
        f"(condition estimate {cond:.3e})"
    )


class GPPosterior:
    """Fitted GP posterior; immutable once constructed.

    Attributes
    ----------
    hyperparams : GPHyperparams
    data : Dataset
        The training data (not copied).
    jitter : float
        Diagonal jitter that made the factorization succeed.
    """

    def __init__(self, hyperparams: GPHyperparams, data: Dataset, standardize: bool = True):
        if data.n == 0:
            raise ValueError("cannot fit a GP to an empty dataset")
        self.hyperparams = hyperparams.with_dim(data.dim)
        self.data = data
        z, self._y_mean, self._y_scale = _standardize(data.y, standardize)
        h = self.hyperparams
        K = kernel(h, data.X, data.X)
        K[np.diag_indices_from(K)] += h.noise_variance
        self._L, self.jitter = _chol_with_jitter(K)
        self._alpha = linalg.cho_solve((self._L, True), z)
        self._z = z

    @property
    def y_mean(self) -> float:
        return self._y_mean

    @property
    def y_scale(self) -> float:
        return self._y_scale

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation of the latent function.

        Parameters
        ----------
        X : array, shape (m, d)

        Returns
        -------
        mean, sd : arrays of shape (m,)
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Ks = kernel(self.hyperparams, X, self.data.X)
        mean = Ks @ self._alpha
        v = linalg.solve_triangular(self._L, Ks.T, lower=True)
        var = self.hyperparams.signal_variance - np.einsum("ij,ij->j", v, v)
        sd = np.sqrt(np.maximum(var, 0.0))
        return self._y_mean + self._y_scale * mean, self._y_scale * sd

    def joint(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Joint posterior mean vector and covariance matrix at rows of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Ks = kernel(self.hyperparams, X, self.data.X)
        Kss = kernel(self.hyperparams, X, X)
        mean = Ks @ self._alpha
        v = linalg.solve_triangular(self._L, Ks.T, lower=True)
        cov = Kss - v.T @ v
        s2 = self._y_scale**2
        return self._y_mean + self._y_scale * mean, s2 * cov


def gp_fit(h: GPHyperparams, data: Dataset, standardize: bool = True) -> GPPosterior:
    """Fit the GP posterior; raises GPFitError if the Gram matrix cannot be
    factorized even after the jitter ladder."""
    return GPPosterior(h, data, standardize=standardize)


def gp_predict(post: GPPosterior, x) -> tuple[float, float]:
    """Posterior mean and sd at a single design."""
    mean, sd = post.predict(np.asarray(x, dtype=float).reshape(1, -1))
    return float(mean[0]), float(sd[0])


def gp_sample_joint(
    post: GPPosterior,
    X: np.ndarray,
    rng: np.random.Generator,
    n_draws: int = 1,
) -> np.ndarray:
    """Draw from the joint posterior of the latent function at rows of X.

    Duplicate rows are collapsed before factorization, so their sampled
    values are exactly equal.  The covariance square root comes from an
    eigendecomposition with small eigenvalues clamped to zero, which keeps
    degenerate directions (e.g. noiseless training inputs) exactly at the
    posterior mean.

    Returns
    -------
    array, shape (n_draws, m); squeezed to (m,) when n_draws == 1.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    uniq, inverse = np.unique(X, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    mean, cov = post.joint(uniq)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, 0.0)
    if evals.size:
        evals[evals < 1e-12 * max(evals.max(), 1e-300)] = 0.0
    root = evecs * np.sqrt(evals)
    z = rng.standard_normal((uniq.shape[0], n_draws))
    draws = (mean[:, None] + root @ z).T
    draws = draws[:, inverse]
    return draws[0] if n_draws == 1 else draws


def gp_log_marginal_likelihood(
    h: GPHyperparams, data: Dataset, standardize: bool = True
) -> tuple[float, np.ndarray]:
    """Log marginal likelihood of the (standardized) responses and its exact
    gradient with respect to log-hyperparameters.

    Returns
    -------
    value : float
    grad : array, shape (d + 2,)
        Ordered as [log sigma_f^2, log l_1..l_d, log sigma_n^2].
    """
    if data.n == 0:
        raise ValueError("log marginal likelihood needs a nonempty dataset")
    h = h.with_dim(data.dim)
    z, _, _ = _standardize(data.y, standardize)
    n, d = data.X.shape
    K = kernel(h, data.X, data.X)
    Ky = K.copy()
    Ky[np.diag_indices_from(Ky)] += h.noise_variance
    L, _ = _chol_with_jitter(Ky)
    alpha = linalg.cho_solve((L, True), z)
    value = float(
        -0.5 * z @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG2PI
    )

    Kinv = linalg.cho_solve((L, True), np.eye(n))
    M = np.outer(alpha, alpha) - Kinv
    grad = np.empty(d + 2)
    # d K / d log sigma_f^2 = K
    grad[0] = 0.5 * np.sum(M * K)
    ls = h.lengthscales
    for j in range(d):
        diff2 = (data.X[:, j : j + 1] - data.X[:, j : j + 1].T) ** 2
        grad[1 + j] = 0.5 * np.sum(M * (K * diff2 / ls[j] ** 2))
    # d Ky / d log sigma_n^2 = sigma_n^2 * I
    grad[-1] = 0.5 * h.noise_variance * np.trace(M)
    return value, grad
