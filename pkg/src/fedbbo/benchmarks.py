"""Synthetic heterogeneous black-box families with known optima, and regret."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import Domain
from .rng import substream

__all__ = [
    "FamilySpec",
    "BlackBoxFamily",
    "RegretTrace",
    "make_family",
    "evaluate",
    "regret_update",
    "BASE_FUNCTIONS",
]


def sphere_bowl(X: np.ndarray) -> np.ndarray:
    """Concave bowl, maximum 0 at the box center."""
    return -np.sum((X - 0.5) ** 2, axis=1)


_BUMP_CENTERS = np.array([[0.2, 0.8], [0.75, 0.2], [0.45, 0.5], [0.85, 0.85]])
_BUMP_HEIGHTS = np.array([0.6, 0.8, 0.35, 1.0])
_BUMP_WIDTHS = np.array([0.12, 0.10, 0.20, 0.07])


def multi_bump(X: np.ndarray) -> np.ndarray:
    """Several Gaussian bumps of unequal height; the best one is narrow."""
    d = X.shape[1]
    reps = -(-d // 2)  # tile the 2-d pattern up to d dims
    out = np.zeros(X.shape[0])
    for c, a, w in zip(_BUMP_CENTERS, _BUMP_HEIGHTS, _BUMP_WIDTHS):
        center = np.tile(c, reps)[:d]
        out += a * np.exp(-np.sum((X - center) ** 2, axis=1) / (2 * w**2))
    return out


def product_peaks(X: np.ndarray) -> np.ndarray:
    """Product of bimodal per-dimension profiles: 2^d peaks, one dominant."""
    g = np.exp(-((X - 0.3) ** 2) / (2 * 0.08**2)) + 0.55 * np.exp(
        -((X - 0.72) ** 2) / (2 * 0.10**2)
    )
    return np.prod(g, axis=1)


BASE_FUNCTIONS = {
    "sphere_bowl": sphere_bowl,
    "multi_bump": multi_bump,
    "product_peaks": product_peaks,
}


@dataclass(frozen=True)
class FamilySpec:
    """Recipe for a family of K related black-box objectives.

    Heterogeneity h shifts each agent's inputs by b_k ~ U(-h, h)^d and
    offsets outputs by c_k ~ U(-h, h); adversarial mode flips the sign for
    odd-indexed agents.
    """

    base: str = "multi_bump"
    dim: int = 2
    n_agents: int = 1
    heterogeneity: float = 0.0
    noise_sd: float = 0.0
    adversarial: bool = False

    def __post_init__(self):
        if self.base not in BASE_FUNCTIONS:
            raise ValueError(f"unknown base function {self.base!r}")
        if self.dim < 1 or self.n_agents < 1:
            raise ValueError("dim and n_agents must be >= 1")
        if self.heterogeneity < 0 or self.noise_sd < 0:
            raise ValueError("heterogeneity and noise_sd must be >= 0")


@dataclass
class BlackBoxFamily:
    """A concrete draw of per-agent objectives on the unit box."""

    spec: FamilySpec
    domain: Domain
    shifts: np.ndarray  # (K, d)
    offsets: np.ndarray  # (K,)
    signs: np.ndarray  # (K,)
    true_max: np.ndarray = field(default=None)  # (K,)
    true_argmax: np.ndarray = field(default=None)  # (K, d)

    def f(self, k: int, X: np.ndarray) -> np.ndarray:
        """Noiseless objective of agent k at rows of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        base = BASE_FUNCTIONS[self.spec.base]
        return self.signs[k] * base(X - self.shifts[k]) + self.offsets[k]

    def f_single(self, k: int, x) -> float:
        return float(self.f(k, np.asarray(x, dtype=float).reshape(1, -1))[0])


def _grid_points(dom: Domain, per_dim: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, per_dim) for lo, hi in zip(dom.lower, dom.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _refine_max(score, dom: Domain, x0: np.ndarray, sweeps: int = 40) -> tuple[np.ndarray, float]:
    # coordinate pattern search with halving steps, no randomness
    x = x0.copy()
    v = float(score(x[None, :])[0])
    step = 0.02 * (dom.upper - dom.lower)
    for _ in range(sweeps):
        for j in range(dom.dim):
            for direction in (1.0, -1.0):
                trial = x.copy()
                trial[j] = min(max(trial[j] + direction * step[j], dom.lower[j]), dom.upper[j])
                tv = float(score(trial[None, :])[0])
                if tv > v:
                    x, v = trial, tv
        step *= 0.7
    return x, v


def make_family(spec: FamilySpec, seed: int) -> BlackBoxFamily:
    """Deterministic family instance; identical for identical spec and seed."""
    if spec.dim > 6:
        raise ValueError("families support dim <= 6")
    rng = substream(seed, "family")
    dom = Domain.unit(spec.dim)
    h = spec.heterogeneity
    shifts = rng.uniform(-h, h, size=(spec.n_agents, spec.dim)) if h > 0 else np.zeros(
        (spec.n_agents, spec.dim)
    )
    offsets = rng.uniform(-h, h, size=spec.n_agents) if h > 0 else np.zeros(spec.n_agents)
    signs = np.ones(spec.n_agents)
    if spec.adversarial:
        signs[1::2] = -1.0
    fam = BlackBoxFamily(spec, dom, shifts, offsets, signs)

    if spec.dim <= 2:
        probe = _grid_points(dom, 201)
    else:
        probe = substream(seed, "family", "probe").uniform(
            dom.lower, dom.upper, size=(2**16, spec.dim)
        )
    true_max = np.empty(spec.n_agents)
    true_argmax = np.empty((spec.n_agents, spec.dim))
    for k in range(spec.n_agents):
        vals = fam.f(k, probe)
        best = int(np.argmax(vals))
        x, v = _refine_max(lambda X, kk=k: fam.f(kk, X), dom, probe[best])
        true_argmax[k] = x
        true_max[k] = v
    fam.true_max = true_max
    fam.true_argmax = true_argmax
    return fam


def evaluate(fam: BlackBoxFamily, k: int, x, rng: np.random.Generator) -> float:
    """Noisy response y = f_k(x) + N(0, noise_sd^2)."""
    y = fam.f_single(k, x)
    if fam.spec.noise_sd > 0:
        y += rng.normal(0.0, fam.spec.noise_sd)
    return float(y)


@dataclass
class RegretTrace:
    """Per-agent simple and cumulative regret, scored on noiseless values.

    Simple regret at round t is f_k^* minus the best noiseless value among
    designs evaluated so far (clamped at zero: the reference optimum has
    grid resolution).
    """

    n_agents: int
    best_seen: np.ndarray = field(default=None)
    simple: list = field(default_factory=list)
    cumulative: list = field(default_factory=list)

    def __post_init__(self):
        if self.best_seen is None:
            self.best_seen = np.full(self.n_agents, -np.inf)
        self._cum = np.zeros(self.n_agents)
        self._round_simple: Optional[np.ndarray] = None

    def start_round(self) -> None:
        self._round_simple = np.full(self.n_agents, np.nan)

    def update(self, fam: BlackBoxFamily, k: int, x) -> float:
        """Record agent k's evaluation at x; returns its current simple regret."""
        value = fam.f_single(k, x)
        self.best_seen[k] = max(self.best_seen[k], value)
        regret = max(float(fam.true_max[k] - self.best_seen[k]), 0.0)
        self._cum[k] += max(float(fam.true_max[k] - value), 0.0)
        if self._round_simple is not None:
            self._round_simple[k] = regret
        return regret

    def end_round(self) -> None:
        self.simple.append(self._round_simple.copy())
        self.cumulative.append(self._cum.copy())
        self._round_simple = None

    def simple_array(self) -> np.ndarray:
        """(rounds, K) simple-regret matrix."""
        return np.asarray(self.simple)


def regret_update(trace: RegretTrace, fam: BlackBoxFamily, k: int, x) -> float:
    """Functional wrapper over RegretTrace.update."""
    return trace.update(fam, k, x)
