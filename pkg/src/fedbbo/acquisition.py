"""Utility functions and expected-utility maximization.

The acquisition maximizer is gradient-free: it scores a random candidate set
and then runs a coordinate pattern search from the best candidate.  That
keeps it agnostic to whether the score is a closed form (expected
improvement, confidence bounds) or a Monte-Carlo average over posterior
draws, and makes results deterministic given the generator handle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .domain import Domain
from .gp import GPPosterior

__all__ = [
    "Utility",
    "AcquisitionResult",
    "expected_improvement",
    "ei_values",
    "confidence_bound",
    "maximize_acquisition",
    "mc_expected_utility",
    "posterior_score_fn",
    "eta_default",
]

UTILITY_KINDS = ("improvement", "lcb_maximizer", "ucb", "thompson")


@dataclass(frozen=True)
class Utility:
    """A utility kind plus the parameters it needs.

    ``improvement`` needs ``incumbent`` (the best observed response y*);
    ``ucb`` and ``lcb_maximizer`` need ``eta``; ``thompson`` needs nothing.
    """

    kind: str
    incumbent: Optional[float] = None
    eta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in UTILITY_KINDS:
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.kind == "improvement" and self.incumbent is None:
            raise ValueError("improvement utility needs an incumbent")
        if self.kind in ("ucb", "lcb_maximizer") and self.eta is None:
            raise ValueError(f"{self.kind} utility needs eta")


@dataclass(frozen=True)
class AcquisitionResult:
    design: np.ndarray
    value: float
    evals: int


def ei_values(mean: np.ndarray, sd: np.ndarray, incumbent: float) -> np.ndarray:
    """Closed-form expected improvement for arrays of posterior moments.

    EI = (mu - y*) Phi(z) + sd phi(z) with z = (mu - y*)/sd, and
    max(mu - y*, 0) where sd == 0.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    improve = mean - incumbent
    out = np.maximum(improve, 0.0)
    pos = sd > 0
    if np.any(pos):
        z = improve[pos] / sd[pos]
        out = np.array(out, dtype=float)
        out[pos] = improve[pos] * norm.cdf(z) + sd[pos] * norm.pdf(z)
    return out


def expected_improvement(post: GPPosterior, x, incumbent: float) -> float:
    """Expected improvement over ``incumbent`` at a single design."""
    mean, sd = post.predict(np.asarray(x, dtype=float).reshape(1, -1))
    return float(ei_values(mean, sd, incumbent)[0])


def confidence_bound(post: GPPosterior, x, eta: float, side: str = "lower") -> float:
    """mu -/+ eta * sd at a single design; ``side`` is "lower" or "upper"."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    mean, sd = post.predict(np.asarray(x, dtype=float).reshape(1, -1))
    sign = -1.0 if side == "lower" else 1.0
    return float(mean[0] + sign * eta * sd[0])


def posterior_score_fn(post: GPPosterior, utility: Utility) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized closed-form score X (n, d) -> (n,) for a GP posterior."""
    if utility.kind == "improvement":

        def score(X):
            mean, sd = post.predict(X)
            return ei_values(mean, sd, utility.incumbent)

    elif utility.kind == "ucb":

        def score(X):
            mean, sd = post.predict(X)
            return mean + utility.eta * sd

    elif utility.kind == "lcb_maximizer":

        def score(X):
            mean, sd = post.predict(X)
            return mean - utility.eta * sd

    else:
        raise ValueError(f"no closed-form score for utility kind {utility.kind!r}")
    return score


def maximize_acquisition(
    score: Callable[[np.ndarray], np.ndarray],
    dom: Domain,
    budget: int,
    rng: np.random.Generator,
    candidates: Optional[np.ndarray] = None,
    refine_sweeps: int = 3,
) -> AcquisitionResult:
    """Maximize ``score`` over ``dom``.

    Scores a random candidate set of size ``budget`` (drawn from ``rng``
    unless ``candidates`` is supplied), then pattern-searches coordinatewise
    from the best candidate with a halving step.  Ties in the candidate
    argmax break toward the lowest index; a refinement move needs a strict
    improvement.  The returned value is the maximum over every evaluated
    point.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if candidates is None:
        candidates = dom.sample(rng, budget)
    else:
        candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    values = np.asarray(score(candidates), dtype=float)
    best = int(np.argmax(values))
    x = candidates[best].copy()
    v = float(values[best])
    evals = candidates.shape[0]

    step = 0.25 * (dom.upper - dom.lower)
    for _ in range(refine_sweeps):
        for j in range(dom.dim):
            for direction in (1.0, -1.0):
                trial = x.copy()
                trial[j] = min(
                    max(trial[j] + direction * step[j], dom.lower[j]), dom.upper[j]
                )
                tv = float(np.asarray(score(trial[None, :]))[0])
                evals += 1
                if tv > v:
                    x, v = trial, tv
        step *= 0.5
    return AcquisitionResult(x, v, evals)


def mc_expected_utility(samples: np.ndarray, utility: Utility) -> np.ndarray:
    """Monte-Carlo expected utility from posterior draws.

    Parameters
    ----------
    samples : array, shape (n_draws, n_candidates)
        Joint posterior function draws evaluated at a candidate set.
    utility : Utility
        Must have a per-draw form: ``improvement`` or ``thompson``.

    Returns
    -------
    array, shape (n_candidates,): mean utility per candidate.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] < 1:
        raise ValueError("need at least one sample")
    if utility.kind == "improvement":
        return np.maximum(samples - utility.incumbent, 0.0).mean(axis=0)
    if utility.kind == "thompson":
        return samples.mean(axis=0)
    raise ValueError(f"utility kind {utility.kind!r} has no per-draw form")


def eta_default(t: int, dim: int, delta: float = 0.1) -> float:
    """Confidence-width schedule sqrt(2 log(d t^2 pi^2 / (6 delta)))."""
    if t < 1:
        raise ValueError("t must be >= 1")
    return float(np.sqrt(2.0 * np.log(dim * t**2 * np.pi**2 / (6.0 * delta))))
