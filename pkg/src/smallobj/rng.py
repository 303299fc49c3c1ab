"""Seed handling.

Every random stream is a numpy ``Generator`` over the PCG64 bit generator,
seeded through ``SeedSequence``. Both algorithms are fully specified, so a
seed yields the same sequence on every platform. Per-item streams are keyed
by a BLAKE2b digest of the item key, which keeps results independent of the
order in which items are processed.
"""

from __future__ import annotations

import hashlib
import secrets

import numpy as np

SEED_MASK = (1 << 64) - 1


def make_rng(seed: int | np.random.Generator | None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        return np.random.default_rng()
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_u64(seed))))


def derive_rng(master_seed: int, *keys) -> np.random.Generator:
    """Independent stream for ``keys`` (e.g. image id and repetition index)."""
    digest = hashlib.blake2b(repr(keys).encode("utf-8"), digest_size=16).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    seq = np.random.SeedSequence([_u64(master_seed) & 0xFFFFFFFF, _u64(master_seed) >> 32, *words])
    return np.random.Generator(np.random.PCG64(seq))


def random_seed() -> int:
    return secrets.randbits(63)


def _u64(seed) -> int:
    return int(seed) & SEED_MASK
