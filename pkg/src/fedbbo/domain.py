"""Box search domains and per-agent trial histories."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Domain", "Dataset", "latin_hypercube"]


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box in R^d.

    Parameters
    ----------
    lower, upper : array_like, shape (d,)
        Componentwise bounds, ``lower[j] < upper[j]``.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if lo.size < 1:
            raise ValueError("domain dimension must be >= 1")
        if not np.all(lo < hi):
            raise ValueError("domain requires lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @classmethod
    def unit(cls, dim: int) -> "Domain":
        """The unit box [0, 1]^dim."""
        return cls(np.zeros(dim), np.ones(dim))

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(
            np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol)
        )

    def clip(self, x: np.ndarray) -> np.ndarray:
        """Project onto the box, componentwise."""
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n uniform points, shape (n, d)."""
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))


def latin_hypercube(dom: Domain, n: int, rng: np.random.Generator) -> np.ndarray:
    """n Latin-hypercube points in ``dom``, shape (n, d)."""
    if n < 1:
        raise ValueError("need n >= 1")
    u = np.empty((n, dom.dim))
    for j in range(dom.dim):
        u[:, j] = (rng.permutation(n) + rng.uniform(size=n)) / n
    return dom.lower + u * (dom.upper - dom.lower)


@dataclass
class Dataset:
    """Ordered trial history of one agent: designs ``X`` and responses ``y``.

    Rows of ``X`` are insertion-ordered, so the row index is the time index.
    """

    dim: int
    owner: int = 0
    X: np.ndarray = field(default=None)
    y: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.X is None:
            self.X = np.empty((0, self.dim))
        if self.y is None:
            self.y = np.empty(0)
        self.X = np.asarray(self.X, dtype=float).reshape(-1, self.dim)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y must hold the same number of observations")
        if self.y.size and not np.all(np.isfinite(self.y)):
            raise ValueError("responses must be finite")

    @classmethod
    def from_arrays(cls, X, y, owner: int = 0) -> "Dataset":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return cls(dim=X.shape[1], owner=owner, X=X, y=y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def observations(self):
        """Insertion-ordered (design, response) pairs."""
        return list(zip(self.X, self.y))

    def append(self, x, y: float) -> None:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise ValueError(f"design has dim {x.size}, dataset has dim {self.dim}")
        if not np.isfinite(y):
            raise ValueError("response must be finite")
        self.X = np.vstack([self.X, x[None, :]])
        self.y = np.append(self.y, float(y))

    def copy(self) -> "Dataset":
        return Dataset(dim=self.dim, owner=self.owner, X=self.X.copy(), y=self.y.copy())
