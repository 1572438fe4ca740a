"""Global-decision federation: candidate maximization and consensus mixing.

Each agent proposes the maximizer of its own expected utility; a cloud step
replaces agent k's proposal with the weighted combination
sum_j w_kj x_j of everyone's proposals, where the weights form a symmetric
doubly stochastic matrix that anneals toward the identity so agents end up
acting on their own candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .acquisition import AcquisitionResult, Utility, maximize_acquisition, posterior_score_fn
from .domain import Domain
from .gp import GPPosterior

__all__ = [
    "ConsensusMatrix",
    "WSchedule",
    "uniform_consensus",
    "identity_consensus",
    "consensus_mix",
    "w_update_linear",
    "candidate_step",
    "consensus_round",
]

_DS_TOL = 1e-9


@dataclass(frozen=True)
class ConsensusMatrix:
    """Symmetric doubly stochastic mixing weights at a round index.

    ``validate`` enforces symmetry, entries in [0, 1], and unit row/column
    sums to 1e-9.  Once linear decay starts clamping entries at the [0, 1]
    bounds, exact double stochasticity can no longer be asserted; pass
    ``check_sums=False`` in that regime.
    """

    weights: np.ndarray
    time: int = 0

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("consensus matrix must be square")
        object.__setattr__(self, "weights", W)

    @property
    def n_agents(self) -> int:
        return self.weights.shape[0]

    def validate(self, tol: float = _DS_TOL, check_sums: bool = True) -> None:
        W = self.weights
        if not np.allclose(W, W.T, atol=tol):
            raise ValueError("consensus matrix must be symmetric")
        if np.any(W < -tol) or np.any(W > 1 + tol):
            raise ValueError("consensus entries must lie in [0, 1]")
        if check_sums:
            rows = W.sum(axis=1)
            cols = W.sum(axis=0)
            if np.any(np.abs(rows - 1) > tol) or np.any(np.abs(cols - 1) > tol):
                raise ValueError("consensus matrix must be doubly stochastic")


def uniform_consensus(k: int) -> ConsensusMatrix:
    """All-equal weights 1/K; the natural starting matrix."""
    return ConsensusMatrix(np.full((k, k), 1.0 / k), time=0)


def identity_consensus(k: int) -> ConsensusMatrix:
    return ConsensusMatrix(np.eye(k), time=0)


def consensus_mix(W: ConsensusMatrix, candidates: np.ndarray, dom: Domain) -> np.ndarray:
    """Mix the K candidate designs: agent k receives sum_j w_kj x_j.

    The result is clamped to the domain box; for in-domain candidates the
    clamp is a no-op because a convex combination stays in the box.
    """
    W.validate(check_sums=False)
    X = np.atleast_2d(np.asarray(candidates, dtype=float))
    if X.shape[0] != W.n_agents:
        raise ValueError("need one candidate per agent")
    return dom.clip(W.weights @ X)


def w_update_linear(W: ConsensusMatrix, horizon: int) -> ConsensusMatrix:
    """One linear-decay step toward the identity.

    Adds (K-1)/(TK) to each diagonal entry and subtracts 1/(TK) from each
    off-diagonal entry, then clamps diagonals at 1 and off-diagonals at 0.
    Clamping (rather than renormalizing) preserves symmetry and the linear
    decay; row/column sums are exact only while no entry is clamped.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    k = W.n_agents
    delta = np.full((k, k), -1.0 / (horizon * k))
    np.fill_diagonal(delta, (k - 1) / (horizon * k))
    new = W.weights + delta
    off = ~np.eye(k, dtype=bool)
    new[off] = np.maximum(new[off], 0.0)
    diag = np.minimum(np.diag(new), 1.0)
    np.fill_diagonal(new, diag)
    return ConsensusMatrix(new, time=W.time + 1)


@dataclass
class WSchedule:
    """Time-varying consensus weights.

    ``linear_decay_to_identity`` applies the linear step each round;
    ``constant`` keeps the initial matrix; ``custom`` delegates to a
    user-supplied step function.
    """

    kind: str = "linear_decay_to_identity"
    initial: Optional[ConsensusMatrix] = None
    horizon: int = 1
    custom_step: Optional[Callable[[ConsensusMatrix], ConsensusMatrix]] = None

    def __post_init__(self):
        if self.kind not in ("linear_decay_to_identity", "constant", "custom"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "custom" and self.custom_step is None:
            raise ValueError("custom schedule needs a step function")

    def start(self, k: int) -> ConsensusMatrix:
        W = self.initial if self.initial is not None else uniform_consensus(k)
        W.validate()
        return W

    def step(self, W: ConsensusMatrix) -> ConsensusMatrix:
        if self.kind == "linear_decay_to_identity":
            return w_update_linear(W, self.horizon)
        if self.kind == "constant":
            return ConsensusMatrix(W.weights, time=W.time + 1)
        return self.custom_step(W)


def candidate_step(
    post: GPPosterior,
    utility: Utility,
    dom: Domain,
    budget: int,
    rng: np.random.Generator,
) -> AcquisitionResult:
    """Agent-side maximization of its own expected utility."""
    return maximize_acquisition(posterior_score_fn(post, utility), dom, budget, rng)


def consensus_round(
    posteriors: Sequence[Optional[GPPosterior]],
    utilities: Sequence[Utility],
    dom: Domain,
    budget: int,
    W: ConsensusMatrix,
    schedule: WSchedule,
    rngs: Sequence[np.random.Generator],
    share_noise_sd: float = 0.0,
    noise_rngs: Optional[Sequence[np.random.Generator]] = None,
) -> tuple[np.ndarray, np.ndarray, ConsensusMatrix, list[int]]:
    """One synchronized round: candidates, optional share noise, cloud mix.

    An agent whose posterior is None (failed surrogate fit) falls back to a
    uniform random in-domain design; its index is reported so the caller can
    log the fallback.

    Returns
    -------
    new_designs : (K, d) mixed designs, one per agent
    candidates : (K, d) the (possibly noised) shared candidates
    W_next : advanced consensus matrix
    fallbacks : indices of agents that used the random fallback
    """
    k = len(posteriors)
    if W.n_agents != k:
        raise ValueError("consensus matrix size does not match agent count")
    candidates = np.empty((k, dom.dim))
    fallbacks: list[int] = []
    for i, post in enumerate(posteriors):
        if post is None:
            candidates[i] = dom.sample(rngs[i], 1)[0]
            fallbacks.append(i)
        else:
            candidates[i] = candidate_step(post, utilities[i], dom, budget, rngs[i]).design
    if share_noise_sd > 0:
        if noise_rngs is None:
            raise ValueError("share_noise_sd > 0 needs noise_rngs")
        for i in range(k):
            candidates[i] = dom.clip(
                candidates[i] + noise_rngs[i].normal(0.0, share_noise_sd, size=dom.dim)
            )
    mixed = consensus_mix(W, candidates, dom)
    return mixed, candidates, schedule.step(W), fallbacks
