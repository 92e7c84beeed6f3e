"""Deterministic seed derivation for named random streams.

A single master seed fans out to independent child streams keyed by name
(and optional indices), so toggling one randomized feature never perturbs
another's draws. Derivation is SHA-256 based and stable across platforms
and Python/NumPy versions.
"""

from __future__ import annotations

import hashlib

import numpy as np


def child_seed(master_seed: int, *key: object) -> int:
    """Derive a 128-bit child seed from a master seed and a stream key.

    Key parts are joined by their string form, so ("augment", 3, 17) and
    ("augment", 31, 7) hash differently (parts are delimiter-separated).
    """
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode("ascii"))
    for part in key:
        h.update(b"/")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest()[:16], "big")


def child_rng(master_seed: int, *key: object) -> np.random.Generator:
    """A PCG64 generator seeded from ``child_seed(master_seed, *key)``."""
    return np.random.default_rng(child_seed(master_seed, *key))
