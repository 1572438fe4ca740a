"""Conditioned local decisions: borrowing designs or densities from peers.

A peer shares its lower-confidence-bound maximizer only when a two-party
greater-than comparison confirms the LCB value beats the recipient's best
posterior mean; the recipient then treats each borrowed design x+ as a
constraint f(x+) > delta on its own latent function and conditions by
rejection sampling.  A borrowed design that yields no accepted sample within
the budget is discarded, which is what protects against heterogeneous or
adversarial peers.  Alternatively, peers share densities over their believed
optimum and the recipient reweights its utility by the density product
raised to beta/T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .acquisition import (
    AcquisitionResult,
    Utility,
    maximize_acquisition,
    mc_expected_utility,
    posterior_score_fn,
)
from .domain import Domain
from .gp import GPPosterior, gp_sample_joint

__all__ = [
    "SharedDesign",
    "SharedDesignSet",
    "SharedDensity",
    "ConditionedSurrogate",
    "TrustedComparator",
    "lcb_maximizer",
    "posterior_mean_max",
    "build_shared_set",
    "condition_by_rejection",
    "local_decision_conditioned",
    "density_weighted_decision",
    "thompson_density",
]

UTILITY_FLOOR = 1e-12
DENSITY_FLOOR = 1e-300


class TrustedComparator:
    """Trusted two-party greater-than oracle.

    Stands in for a secure comparison protocol: both scalars go in, only the
    boolean comes out, and callers must log nothing but the boolean.  A real
    secure-computation backend can be substituted by implementing
    ``greater``.
    """

    def greater(self, sender_value: float, recipient_value: float) -> bool:
        return bool(sender_value > recipient_value)


@dataclass(frozen=True)
class SharedDesign:
    """A borrowed design and where it came from (peer id, "expert", ...)."""

    design: np.ndarray
    source: object

    def __post_init__(self):
        object.__setattr__(
            self, "design", np.asarray(self.design, dtype=float).reshape(-1)
        )


@dataclass
class SharedDesignSet:
    """Designs borrowed by one recipient plus its acceptance threshold."""

    items: list[SharedDesign] = field(default_factory=list)
    threshold: float = -np.inf
    recipient: int = 0

    def __post_init__(self):
        if not math.isfinite(self.threshold) and self.items:
            raise ValueError("threshold must be finite when designs are present")

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class SharedDensity:
    """A belief over the optimum location: isotropic Gaussian or KDE.

    ``kind`` is "gaussian" (center, scale) or "kde" (points, bandwidth).
    """

    kind: str
    source: object = None
    center: Optional[np.ndarray] = None
    scale: float = 0.0
    points: Optional[np.ndarray] = None
    bandwidth: float = 0.0

    def __post_init__(self):
        if self.kind == "gaussian":
            if self.center is None or self.scale <= 0:
                raise ValueError("gaussian density needs a center and scale > 0")
            object.__setattr__(
                self, "center", np.asarray(self.center, dtype=float).reshape(-1)
            )
        elif self.kind == "kde":
            if self.points is None or self.bandwidth <= 0:
                raise ValueError("kde density needs points and bandwidth > 0")
            object.__setattr__(
                self, "points", np.atleast_2d(np.asarray(self.points, dtype=float))
            )
        else:
            raise ValueError(f"unknown density kind {self.kind!r}")

    def log_pdf(self, X: np.ndarray) -> np.ndarray:
        """Log density at rows of X, shape (n,)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "gaussian":
            d = self.center.size
            q = np.sum((X - self.center) ** 2, axis=1) / self.scale**2
            return -0.5 * q - d * np.log(self.scale) - 0.5 * d * np.log(2 * np.pi)
        pts = self.points
        n, d = pts.shape
        d2 = (
            np.sum(X**2, axis=1)[:, None]
            - 2.0 * X @ pts.T
            + np.sum(pts**2, axis=1)[None, :]
        )
        logk = -0.5 * d2 / self.bandwidth**2
        norm = -d * np.log(self.bandwidth) - 0.5 * d * np.log(2 * np.pi) - np.log(n)
        m = logk.max(axis=1)
        return m + np.log(np.exp(logk - m[:, None]).sum(axis=1)) + norm

    def pdf(self, X: np.ndarray) -> np.ndarray:
        return np.exp(self.log_pdf(X))


def lcb_maximizer(
    post: GPPosterior, eta: float, dom: Domain, budget: int, rng: np.random.Generator
) -> AcquisitionResult:
    """Maximizer of mu(x) - eta * sd(x) over the candidate grid."""
    return maximize_acquisition(
        posterior_score_fn(post, Utility("lcb_maximizer", eta=eta)), dom, budget, rng
    )


def posterior_mean_max(
    post: GPPosterior, dom: Domain, budget: int, rng: np.random.Generator
) -> AcquisitionResult:
    """Max of the posterior mean over the candidate grid; the recipient's
    acceptance threshold delta."""

    def score(X):
        mean, _ = post.predict(X)
        return mean

    return maximize_acquisition(score, dom, budget, rng)


def build_shared_set(
    sender_post: GPPosterior,
    recipient_post: GPPosterior,
    eta: float,
    dom: Domain,
    budget: int,
    rng_sender: np.random.Generator,
    rng_recipient: np.random.Generator,
    comparator: Optional[TrustedComparator] = None,
    sender_id: object = None,
) -> tuple[Optional[SharedDesign], float, bool]:
    """One sender-to-recipient sharing attempt.

    The sender's LCB maximizer is shared iff the comparator confirms its LCB
    value strictly exceeds the recipient's threshold delta = max posterior
    mean.  "No design" is a normal outcome.

    Returns (shared design or None, delta, comparator boolean).
    """
    comparator = comparator or TrustedComparator()
    lcb = lcb_maximizer(sender_post, eta, dom, budget, rng_sender)
    delta = posterior_mean_max(recipient_post, dom, budget, rng_recipient).value
    ok = comparator.greater(lcb.value, delta)
    if not ok:
        return None, delta, False
    return SharedDesign(lcb.design, sender_id), delta, True


@dataclass
class ConditionedSurrogate:
    """Base posterior plus accepted joint samples under surviving constraints.

    ``samples`` has shape (n_accepted, n_candidates) and is None when no
    constraint survived (the surrogate degrades to the base posterior).
    """

    base: GPPosterior
    constraints: SharedDesignSet
    candidates: np.ndarray
    surviving: list[SharedDesign] = field(default_factory=list)
    samples: Optional[np.ndarray] = None
    screen_accept_counts: list[int] = field(default_factory=list)
    rs_budget: int = 0

    @property
    def degraded(self) -> bool:
        return self.samples is None


def condition_by_rejection(
    base: GPPosterior,
    shared: SharedDesignSet,
    candidates: np.ndarray,
    n_samples: int,
    rs_budget: int,
    rng: np.random.Generator,
) -> ConditionedSurrogate:
    """Condition ``base`` on f(x+) > delta for each borrowed design by
    rejection sampling.

    Screening is per design: rs_budget latent draws at x+ alone (the
    acceptance law only depends on that marginal), and a design with zero
    acceptances is discarded.  Survivors are then imposed jointly: up to
    rs_budget joint latent draws over candidates plus surviving designs,
    keeping draws where every surviving constraint holds, capped at
    n_samples accepted draws.  If the joint stage accepts nothing, the
    surviving set collapses and the surrogate degrades to ``base``.
    """
    if rs_budget < 1:
        raise ValueError("rs_budget must be >= 1")
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    out = ConditionedSurrogate(
        base=base, constraints=shared, candidates=candidates, rs_budget=rs_budget
    )
    if not shared.items:
        return out
    delta = shared.threshold

    survivors: list[SharedDesign] = []
    for item in shared.items:
        mean, sd = base.predict(item.design[None, :])
        draws = mean[0] + sd[0] * rng.standard_normal(rs_budget)
        accepted = int(np.count_nonzero(draws > delta))
        out.screen_accept_counts.append(accepted)
        if accepted > 0:
            survivors.append(item)
    if not survivors:
        return out

    pts = np.vstack([candidates] + [s.design[None, :] for s in survivors])
    joint = gp_sample_joint(base, pts, rng, n_draws=rs_budget)
    joint = np.atleast_2d(joint)
    constraint_vals = joint[:, candidates.shape[0] :]
    keep = np.all(constraint_vals > delta, axis=1)
    if not np.any(keep):
        return out
    accepted_draws = joint[keep][:n_samples, : candidates.shape[0]]
    out.surviving = survivors
    out.samples = accepted_draws
    return out


def local_decision_conditioned(
    post: GPPosterior,
    shared: SharedDesignSet,
    utility: Utility,
    dom: Domain,
    budget: int,
    n_samples: int,
    rs_budget: int,
    rng: np.random.Generator,
    rng_rs: np.random.Generator,
) -> tuple[np.ndarray, ConditionedSurrogate]:
    """Pick the next design under the conditioned surrogate.

    Candidates come from ``rng``; rejection sampling uses ``rng_rs`` so the
    empty-set fallback consumes exactly the draws of a plain decision.  With
    surviving constraints the candidate set is scored by Monte-Carlo
    expected utility over the accepted draws (argmax, lowest index on ties);
    otherwise the plain closed-form maximization runs on the same
    candidates.
    """
    candidates = dom.sample(rng, budget)
    if not shared.items:
        cond = ConditionedSurrogate(
            base=post, constraints=shared, candidates=candidates, rs_budget=rs_budget
        )
        result = maximize_acquisition(
            posterior_score_fn(post, utility), dom, budget, rng, candidates=candidates
        )
        return result.design, cond
    cond = condition_by_rejection(post, shared, candidates, n_samples, rs_budget, rng_rs)
    if cond.degraded:
        result = maximize_acquisition(
            posterior_score_fn(post, utility), dom, budget, rng, candidates=candidates
        )
        return result.design, cond
    scores = mc_expected_utility(cond.samples, utility)
    return candidates[int(np.argmax(scores))].copy(), cond


def density_weighted_decision(
    post: GPPosterior,
    densities: Sequence[SharedDensity],
    beta: float,
    horizon: int,
    utility: Utility,
    dom: Domain,
    budget: int,
    rng: np.random.Generator,
) -> AcquisitionResult:
    """Maximize F(x) * (prod_k pi_k(x))^(beta/horizon).

    Computed in log space with floors of 1e-12 on the utility and 1e-300 on
    each density.  The utility must be nonnegative pointwise (improvement
    is).  beta == 0 or no densities reduces exactly to the plain decision,
    since the product term is identically one.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    base_score = posterior_score_fn(post, utility)
    if beta == 0.0 or not densities:
        return maximize_acquisition(base_score, dom, budget, rng)
    exponent = beta / horizon

    def weighted_log_score(X):
        f = np.maximum(np.asarray(base_score(X), dtype=float), UTILITY_FLOOR)
        total = np.log(f)
        for pi in densities:
            total = total + exponent * np.maximum(pi.log_pdf(X), np.log(DENSITY_FLOOR))
        return total

    return maximize_acquisition(weighted_log_score, dom, budget, rng)


def thompson_density(
    post: GPPosterior,
    n_draws: int,
    dom: Domain,
    bandwidth: float,
    rng: np.random.Generator,
    grid_size: int = 256,
    jitter_sd: float = 0.0,
    source: object = None,
) -> SharedDensity:
    """Estimate the belief over the optimum by repeated Thompson sampling.

    Draws ``n_draws`` joint posterior samples on a random grid, takes each
    draw's argmax, optionally perturbs the locations with Gaussian noise
    before sharing, and returns the KDE of the argmax locations.
    """
    if n_draws < 1:
        raise ValueError("need n_draws >= 1")
    grid = dom.sample(rng, grid_size)
    draws = np.atleast_2d(gp_sample_joint(post, grid, rng, n_draws=n_draws))
    winners = grid[np.argmax(draws, axis=1)]
    if jitter_sd > 0:
        winners = dom.clip(winners + rng.normal(0.0, jitter_sd, size=winners.shape))
    return SharedDensity(kind="kde", source=source, points=winners, bandwidth=bandwidth)
