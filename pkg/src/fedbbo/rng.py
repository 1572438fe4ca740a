"""Named, splittable random substreams.

Every piece of randomness in a simulation is drawn from a substream addressed
by a path such as ``(agent, round, "acq")``.  Substreams are derived from a
single master seed through a counter-based bit generator (Philox), so the
stream an agent sees depends only on its path, never on scheduling order or
worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream", "substream_seed", "path_token"]

_MASK = (1 << 63) - 1


def path_token(part) -> int:
    """Stable 63-bit token for one path component (int or string)."""
    if isinstance(part, (bool, np.bool_)):
        part = int(part)
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & _MASK


def substream_seed(master_seed: int, *path) -> np.random.SeedSequence:
    """SeedSequence for the substream addressed by ``(master_seed, *path)``."""
    return np.random.SeedSequence(
        [path_token(master_seed)] + [path_token(p) for p in path]
    )


def substream(master_seed: int, *path) -> np.random.Generator:
    """Independent generator for ``(master_seed, *path)``.

    Two calls with the same arguments yield bit-identical streams; streams
    with different paths are statistically independent.
    """
    return np.random.Generator(np.random.Philox(substream_seed(master_seed, *path)))
