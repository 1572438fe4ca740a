"""Federated learning of shared GP hyperparameters.

Agents maximize the weighted sum of their log marginal likelihoods by
iterated broadcast / local gradient ascent / weighted averaging, exchanging
only log-hyperparameter vectors.  Averaging happens in log space so
positivity is closed under aggregation.  Personalization is free: the
shared hyperparameters condition on each agent's private data.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .domain import Dataset
from .gp import GPHyperparams, GPPosterior, gp_fit, gp_log_marginal_likelihood

__all__ = [
    "FedConfig",
    "FedTrace",
    "local_update",
    "fed_round",
    "run_federated_fit",
    "personalize",
    "global_objective",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FedConfig:
    """Communication-round settings for federated hyperparameter learning.

    ``weights`` defaults to each agent's share of the pooled observation
    count.  ``minibatch`` selects a per-step random subsample; its gradients
    are biased by the GP correlations, so full batch is the default.
    """

    rounds: int
    local_steps: int = 1
    step_size: float = 1e-2
    weights: Optional[np.ndarray] = None
    minibatch: Optional[int] = None

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.local_steps < 0:
            raise ValueError("local_steps must be >= 0")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("weights must be nonnegative and sum to 1")
            object.__setattr__(self, "weights", w)
        if self.minibatch is not None and self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")

    def resolve_weights(self, datasets: Sequence[Dataset]) -> np.ndarray:
        if self.weights is not None:
            if self.weights.size != len(datasets):
                raise ValueError("weights length must match agent count")
            return self.weights
        sizes = np.array([max(d.n, 0) for d in datasets], dtype=float)
        total = sizes.sum()
        if total <= 0:
            return np.full(len(datasets), 1.0 / len(datasets))
        return sizes / total


@dataclass
class FedTrace:
    """Per-round global log-hyperparameters and objective values.

    Both lists have length rounds + 1 (initial state included).
    """

    thetas: list[np.ndarray] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            p = self.thetas[0].size if self.thetas else 0
            writer.writerow(["round", "objective"] + [f"theta_{i}" for i in range(p)])
            for r, (theta, obj) in enumerate(zip(self.thetas, self.objectives)):
                writer.writerow([r, repr(float(obj))] + [repr(float(v)) for v in theta])


def _lml_and_grad(theta: np.ndarray, data: Dataset) -> tuple[float, np.ndarray]:
    h = GPHyperparams.from_log_vector(theta)
    return gp_log_marginal_likelihood(h, data)


def local_update(
    theta: np.ndarray,
    data: Dataset,
    steps: int,
    step_size: float,
    minibatch: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """``steps`` gradient-ascent iterates on the agent's log marginal
    likelihood, in log-hyperparameter space.

    ``minibatch`` draws a fresh subsample per step; those gradients are
    biased estimators because the likelihood couples observations, so the
    use is flagged at warning level.
    """
    theta = np.asarray(theta, dtype=float).copy()
    if steps == 0 or data.n == 0:
        return theta
    if minibatch is not None and minibatch < data.n:
        if rng is None:
            raise ValueError("minibatch updates need an rng")
        logger.warning(
            "minibatch local update (%d of %d points): gradients are biased",
            minibatch,
            data.n,
        )
    for _ in range(steps):
        batch = data
        if minibatch is not None and minibatch < data.n:
            idx = np.sort(rng.choice(data.n, size=minibatch, replace=False))
            batch = Dataset.from_arrays(data.X[idx], data.y[idx], owner=data.owner)
        _, grad = _lml_and_grad(theta, batch)
        theta = theta + step_size * grad
    return theta


def fed_round(
    theta: np.ndarray, datasets: Sequence[Dataset], cfg: FedConfig,
    rngs: Optional[Sequence[np.random.Generator]] = None,
) -> np.ndarray:
    """Broadcast theta, run local updates, return the weighted log-space average."""
    weights = cfg.resolve_weights(datasets)
    updates = []
    for i, data in enumerate(datasets):
        rng = rngs[i] if rngs is not None else None
        updates.append(
            local_update(theta, data, cfg.local_steps, cfg.step_size, cfg.minibatch, rng)
        )
    return np.sum([w * u for w, u in zip(weights, updates)], axis=0)


def global_objective(theta: np.ndarray, datasets: Sequence[Dataset], weights: np.ndarray) -> float:
    """Weighted sum of per-agent log marginal likelihoods at theta.

    Recomputed centrally for monitoring only; a deployment would not gather
    this.
    """
    total = 0.0
    for w, data in zip(weights, datasets):
        if data.n == 0:
            continue
        value, _ = _lml_and_grad(theta, data)
        total += w * value
    return float(total)


def run_federated_fit(
    theta0: np.ndarray,
    datasets: Sequence[Dataset],
    cfg: FedConfig,
    rngs: Optional[Sequence[np.random.Generator]] = None,
) -> FedTrace:
    """Run ``cfg.rounds`` federated rounds from ``theta0``; returns the trace
    of thetas and monitored objectives (length rounds + 1)."""
    theta = np.asarray(theta0, dtype=float).copy()
    weights = cfg.resolve_weights(datasets)
    trace = FedTrace()
    trace.thetas.append(theta.copy())
    trace.objectives.append(global_objective(theta, datasets, weights))
    for _ in range(cfg.rounds):
        theta = fed_round(theta, datasets, cfg, rngs)
        trace.thetas.append(theta.copy())
        trace.objectives.append(global_objective(theta, datasets, weights))
    return trace


def personalize(theta: np.ndarray, data: Dataset) -> GPPosterior:
    """Condition the shared hyperparameters on one agent's private data."""
    return gp_fit(GPHyperparams.from_log_vector(theta), data)
