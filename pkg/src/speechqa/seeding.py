"""Deterministic, process-independent RNG derivation.

Python's builtin ``hash`` is salted per process, so every derived stream here
goes through sha256 instead. ``rng_for(seed, "perm", epoch)`` yields the same
numpy Generator on every run and platform.
"""

import hashlib

import numpy as np


def _as_entropy(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def seed_sequence_for(*parts) -> np.random.SeedSequence:
    """Build a SeedSequence from a mixed tuple of ints and strings."""
    return np.random.SeedSequence([_as_entropy(p) for p in parts])


def rng_for(*parts) -> np.random.Generator:
    """A fresh PCG64 Generator keyed by the given parts."""
    return np.random.Generator(np.random.PCG64(seed_sequence_for(*parts)))
