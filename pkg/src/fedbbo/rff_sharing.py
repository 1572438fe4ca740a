"""Federated Thompson sampling over shared feature weights.

All agents hold the same random feature map (same seed), so a posterior
weight draw is a complete description of a sampled surrogate and can be
exchanged instead of data.  Each round an agent uses its own fresh weight
draw with probability p_t, or a uniformly chosen peer message with
probability 1 - p_t; p_t rises to one so agents eventually optimize their
own objective.  A differentially private variant shares a single clipped,
noised average of peer weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .domain import Domain
from .rff import BlrPosterior, RffFeatureMap, blr_sample_weights, rff_features

__all__ = [
    "WeightMessage",
    "DpConfig",
    "MixSchedule",
    "TsDecision",
    "clip_weights",
    "choose_weight_source",
    "ts_decision",
    "dp_average",
    "mix_schedule_eval",
]


@dataclass(frozen=True)
class WeightMessage:
    """A sampled weight vector shared by one agent at one round."""

    weights: np.ndarray
    source: int
    round: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ValueError("weight message entries must be finite")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class DpConfig:
    """Clip-and-noise settings for the averaged-weight variant."""

    clip_norm: float
    noise_sd: float = 0.0
    subset_size: Optional[int] = None

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if self.subset_size is not None and self.subset_size < 1:
            raise ValueError("subset_size must be >= 1")


@dataclass(frozen=True)
class MixSchedule:
    """Self-reliance probability p_t, nondecreasing with p_T = 1.

    ``linear``: p_t = min(1, t / horizon).
    ``exponential``: p_t = (exp(rate t / T) - 1) / (exp(rate) - 1).
    """

    kind: str = "linear"
    horizon: int = 1
    rate: float = 3.0

    def __post_init__(self):
        if self.kind not in ("linear", "exponential"):
            raise ValueError(f"unknown mix schedule kind {self.kind!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.kind == "exponential" and self.rate <= 0:
            raise ValueError("exponential schedule needs rate > 0")


def mix_schedule_eval(s: MixSchedule, t: int) -> float:
    """p_t for round t (1-based); clamped to [0, 1]."""
    frac = min(max(t / s.horizon, 0.0), 1.0)
    if s.kind == "linear":
        return frac
    return float(np.expm1(s.rate * frac) / np.expm1(s.rate))


def clip_weights(w: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale w by min(1, C / ||w||_2)."""
    w = np.asarray(w, dtype=float)
    norm = float(np.linalg.norm(w))
    if norm > clip_norm and norm > 0:
        return w * (clip_norm / norm)
    return w.copy()


@dataclass(frozen=True)
class TsDecision:
    design: np.ndarray
    value: float
    used_own: bool
    peer_source: Optional[int] = None


def choose_weight_source(
    own_weights: np.ndarray,
    peers: Sequence[WeightMessage],
    p_t: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, bool, Optional[int]]:
    """Bernoulli(p_t) choice between own weights and a uniform peer message.

    With no peers, or p_t >= 1, own weights are forced and the Bernoulli
    draw is skipped entirely.
    """
    if not 0.0 <= p_t <= 1.0:
        raise ValueError("p_t must lie in [0, 1]")
    if not peers or p_t >= 1.0:
        return own_weights, True, None
    if rng.uniform() < p_t:
        return own_weights, True, None
    idx = int(rng.integers(len(peers)))
    return peers[idx].weights, False, peers[idx].source


def ts_decision(
    own: BlrPosterior,
    peers: Sequence[WeightMessage],
    feature_map: RffFeatureMap,
    p_t: float,
    dom: Domain,
    budget: int,
    rng: np.random.Generator,
) -> TsDecision:
    """Thompson-sampling step over the shared feature map.

    Draw order from ``rng`` is fixed: own posterior weights, then the
    candidate set, then (only when peers exist and p_t < 1) the source
    choice.  The returned design is the exact argmax of phi(x)^T w over the
    candidate set, lowest index on ties.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    own_w = blr_sample_weights(own, rng)
    candidates = dom.sample(rng, budget)
    w, used_own, peer_source = choose_weight_source(own_w, peers, p_t, rng)
    values = rff_features(feature_map, candidates) @ w
    best = int(np.argmax(values))
    return TsDecision(candidates[best].copy(), float(values[best]), used_own, peer_source)


def dp_average(
    messages: Sequence[WeightMessage],
    cfg: DpConfig,
    rng: np.random.Generator,
    source: int = -1,
) -> WeightMessage:
    """Clip each message to L2 norm <= C, average a subset, add Gaussian noise.

    The subset is drawn uniformly without replacement when ``subset_size``
    is smaller than the number of messages; otherwise all messages are used.
    """
    if not messages:
        raise ValueError("need at least one message")
    msgs = list(messages)
    if cfg.subset_size is not None and cfg.subset_size < len(msgs):
        idx = rng.choice(len(msgs), size=cfg.subset_size, replace=False)
        msgs = [msgs[i] for i in sorted(int(i) for i in idx)]
    clipped = np.stack([clip_weights(m.weights, cfg.clip_norm) for m in msgs])
    avg = clipped.mean(axis=0)
    if cfg.noise_sd > 0:
        avg = avg + rng.normal(0.0, cfg.noise_sd, size=avg.shape)
    return WeightMessage(avg, source=source, round=max(m.round for m in msgs))
