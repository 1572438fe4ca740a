"""Random Fourier features and the weight-space linear surrogate.

The feature map approximates the ARD squared-exponential kernel as
``k(x, x') ~ phi(x)^T phi(x')`` with cosine-only features

    phi(x) = sqrt(2 sigma_f^2 / D) * cos(Omega x + b),

where rows of Omega are drawn from the kernel's spectral density and phases
b are uniform on [0, 2pi).  The single-phase parameterization is used (as
opposed to paired sin/cos) so that agents seeded identically construct
bit-identical maps, which weight sharing requires.

With a N(0, I_D) prior on the weights, the posterior after t observations is
N(nu, sigma^2 Sigma^{-1}) with Sigma = Phi^T Phi + sigma^2 I and
nu = Sigma^{-1} Phi^T y.  Responses are used on their raw scale here; the
closed form above is exact for sigma^2 > 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .domain import Dataset
from .gp import GPHyperparams

__all__ = [
    "RffFeatureMap",
    "BlrPosterior",
    "rff_build",
    "rff_features",
    "blr_fit",
    "blr_fit_features",
    "blr_predict_mean",
    "blr_sample_weights",
]


@dataclass(frozen=True)
class RffFeatureMap:
    """Frozen draw of D random cosine features for a d-dimensional input."""

    frequencies: np.ndarray  # (D, d)
    phases: np.ndarray  # (D,)
    signal_variance: float
    seed: int

    @property
    def n_features(self) -> int:
        return self.phases.size

    @property
    def dim(self) -> int:
        return self.frequencies.shape[1]


def rff_build(seed: int, n_features: int, h: GPHyperparams) -> RffFeatureMap:
    """Draw a feature map; deterministic in ``seed``.

    Frequencies follow the ARD-SE spectral density N(0, diag(1/l^2)), phases
    are uniform on [0, 2pi).
    """
    if n_features < 1:
        raise ValueError("need n_features >= 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    d = h.dim
    freqs = rng.standard_normal((n_features, d)) / h.lengthscales
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_features)
    return RffFeatureMap(freqs, phases, h.signal_variance, seed)


def rff_features(m: RffFeatureMap, X: np.ndarray) -> np.ndarray:
    """Feature matrix phi(X), shape (n, D); a single design gives shape (D,)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != m.dim:
        raise ValueError(f"designs have dim {X.shape[1]}, map has dim {m.dim}")
    amp = np.sqrt(2.0 * m.signal_variance / m.n_features)
    Phi = amp * np.cos(X @ m.frequencies.T + m.phases)
    return Phi[0] if single else Phi


@dataclass(frozen=True)
class BlrPosterior:
    """Gaussian posterior over feature weights: N(mean, noise_variance * Sigma^{-1}).

    ``chol_precision`` is the lower Cholesky factor of Sigma.
    """

    mean: np.ndarray  # (D,)
    chol_precision: np.ndarray  # (D, D), lower
    noise_variance: float

    @property
    def n_features(self) -> int:
        return self.mean.size

    def covariance(self) -> np.ndarray:
        """Dense posterior covariance sigma^2 * Sigma^{-1}."""
        eye = np.eye(self.n_features)
        inv = linalg.cho_solve((self.chol_precision, True), eye)
        return self.noise_variance * inv


def blr_fit_features(Phi: np.ndarray, y: np.ndarray, noise_variance: float) -> BlrPosterior:
    """Posterior from an explicit feature matrix Phi (t, D); Phi may have
    zero rows, which recovers the prior."""
    if noise_variance <= 0:
        raise ValueError("noise_variance must be > 0")
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    D = Phi.shape[1]
    Sigma = Phi.T @ Phi + noise_variance * np.eye(D)
    rhs = Phi.T @ y
    L = linalg.cholesky(Sigma, lower=True)
    mean = linalg.cho_solve((L, True), rhs)
    return BlrPosterior(mean, L, noise_variance)


def blr_fit(m: RffFeatureMap, data: Dataset, noise_variance: float) -> BlrPosterior:
    """Exact posterior Sigma = Phi^T Phi + sigma^2 I, nu = Sigma^{-1} Phi^T y.

    An empty dataset returns the prior: mean 0, covariance sigma^2 Sigma^{-1} = I.
    """
    if data.n:
        return blr_fit_features(rff_features(m, data.X), data.y, noise_variance)
    if noise_variance <= 0:
        raise ValueError("noise_variance must be > 0")
    return blr_fit_features(np.empty((0, m.n_features)), np.empty(0), noise_variance)


def blr_predict_mean(m: RffFeatureMap, p: BlrPosterior, X: np.ndarray) -> np.ndarray:
    """Predictive mean phi(X)^T nu."""
    return rff_features(m, X) @ p.mean


def blr_sample_weights(p: BlrPosterior, rng: np.random.Generator) -> np.ndarray:
    """One draw w ~ N(mean, sigma^2 Sigma^{-1})."""
    z = rng.standard_normal(p.n_features)
    # Sigma = L L^T, so Sigma^{-1} = L^{-T} L^{-1} and w = nu + sigma L^{-T} z.
    return p.mean + np.sqrt(p.noise_variance) * linalg.solve_triangular(
        p.chol_precision.T, z, lower=False
    )
