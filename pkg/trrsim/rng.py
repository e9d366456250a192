"""Seeded PRNG wrappers.

Every random decision in the simulator draws from a :class:`DeterministicRNG`
seeded from the device seed, so identical (config, seed, command sequence)
always reproduce identical results. Independent streams are derived with
:func:`derive_seed` rather than by sharing one generator.
"""
import hashlib
import random as _random
from typing import Sequence

import numpy as np


def derive_seed(seed: int, *labels) -> int:
    """Stable 64-bit sub-seed for a named stream (e.g. ``derive_seed(s, "sampler", bank)``)."""
    text = ":".join([str(seed), *map(str, labels)]).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "big")


class DeterministicRNG:
    """Seeded PRNG wrapper around :class:`random.Random`."""

    def __init__(self, seed: int):
        self._rng = _random.Random(seed)

    def randbelow(self, n: int) -> int:
        return self._rng.randrange(n)

    def randint(self, a: int, b: int) -> int:
        return self._rng.randint(a, b)

    def weighted_index(self, weights: Sequence[float]) -> int:
        return self._rng.choices(range(len(weights)), weights=weights, k=1)[0]


def numpy_generator(seed: int, *labels) -> np.random.Generator:
    """numpy generator for bulk table draws (cell placement)."""
    return np.random.default_rng(derive_seed(seed, *labels))
