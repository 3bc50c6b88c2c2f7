"""Hierarchical seed derivation.

All randomness in a run flows from one global seed. Sub-seeds are derived by
hashing the parent seed together with a string/int path, so any worker can
recompute its stream without coordination and results are independent of
scheduling order.
"""

from __future__ import annotations

import hashlib

import numpy as np

_SEED_BYTES = 8  # 64-bit seeds


def derive_seed(root: int, *path: int | str) -> int:
    """Derive a child seed from ``root`` and a path of labels.

    Deterministic, collision-resistant (SHA-256), and independent of
    platform hash randomization.
    """
    h = hashlib.sha256()
    h.update(str(int(root)).encode("ascii"))
    for part in path:
        h.update(b"/")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest()[:_SEED_BYTES], "little")


def spawn_rng(root: int, *path: int | str) -> np.random.Generator:
    """A fresh PCG64 generator seeded from ``derive_seed(root, *path)``."""
    return np.random.default_rng(derive_seed(root, *path))
