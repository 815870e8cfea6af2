"""Deterministic seed derivation.

Every random consumer derives its own stream from one global seed plus a
fixed label, so adding a consumer never perturbs the streams of existing
ones.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(seed: int, label: str) -> int:
    """Derive a 64-bit child seed from a parent seed and a stream label."""
    digest = hashlib.sha256(f"{seed}\x1f{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int, label: str | None = None) -> np.random.Generator:
    """Seeded generator; with a label, the stream is derived from (seed, label)."""
    if label is not None:
        seed = derive_seed(seed, label)
    return np.random.Generator(np.random.PCG64(seed & MASK64))
