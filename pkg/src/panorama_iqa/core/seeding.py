"""
Deterministic random streams.

A single run seed is split into independent counter-based (Philox) streams
keyed by strings such as an image digest, so every image draws the same numbers
no matter where it sits in a manifest.
"""

import hashlib
from typing import Union

import numpy as np

SeedLike = Union[int, np.random.Generator]


def _key_to_int(key: object) -> int:
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def derive_seed_sequence(seed: int, *keys: object) -> np.random.SeedSequence:
    """Seed sequence for ``seed`` specialised by ``keys``."""
    return np.random.SeedSequence(
        entropy=int(seed), spawn_key=tuple(_key_to_int(key) for key in keys)
    )


def derive_rng(seed: int, *keys: object) -> np.random.Generator:
    """Independent generator for ``seed`` and ``keys`` (order matters)."""
    return np.random.Generator(np.random.Philox(derive_seed_sequence(seed, *keys)))


def derive_int(seed: int, *keys: object) -> int:
    """63-bit integer seed for libraries that take plain integers."""
    state = derive_seed_sequence(seed, *keys).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def as_rng(seed: SeedLike) -> np.random.Generator:
    """Accept either a generator or an integer seed."""
    if isinstance(seed, np.random.Generator):
        return seed
    return derive_rng(int(seed))
