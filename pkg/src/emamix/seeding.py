"""Deterministic seed derivation.

A single master seed fans out to every random decision in a run (dataset
split, batch shuffling, augmentation, parameter init, mixup pairing).
Each consumer derives its own seed from labeled parts, so no two code
paths ever share RNG state and any step can be recomputed in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_seed", "derive_rng"]


def derive_seed(*parts: int | str) -> int:
    """Hash (master seed, labels...) into an independent 63-bit seed.

    Parts are joined with a separator that cannot appear in the decimal
    rendering of ints, so ("a", 12) and ("a1", 2) never collide.
    """
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFF_FFFF_FFFF_FFFF


def derive_rng(*parts: int | str) -> np.random.Generator:
    """A fresh numpy Generator seeded from the derived seed."""
    return np.random.default_rng(derive_seed(*parts))
