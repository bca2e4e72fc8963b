"""Deterministic seed derivation for the pipeline's subsystems.

A single root seed is split into independent child streams with
``np.random.SeedSequence`` so that, e.g., data synthesis and training noise
draws never share a stream. Subsystem names are hashed into stable spawn
keys, which keeps the derivation order-independent: asking for "train" yields
the same generator whether or not "data" was derived first.
"""

from __future__ import annotations

import zlib

import numpy as np

# Fixed registry so typos fail loudly instead of silently forking a stream.
SUBSYSTEMS = ("data", "train", "sample", "eval", "augment")


def subsystem_seed(root_seed: int, subsystem: str) -> np.random.SeedSequence:
    if subsystem not in SUBSYSTEMS:
        raise ValueError(f"unknown subsystem {subsystem!r}, expected one of {SUBSYSTEMS}")
    key = zlib.crc32(subsystem.encode("ascii"))
    return np.random.SeedSequence(entropy=root_seed, spawn_key=(key,))


def subsystem_rng(root_seed: int, subsystem: str) -> np.random.Generator:
    """A ``numpy`` generator seeded for one named subsystem."""
    return np.random.default_rng(subsystem_seed(root_seed, subsystem))


def torch_manual_seed(root_seed: int, subsystem: str) -> int:
    """A 63-bit int suitable for ``torch.manual_seed``, same derivation."""
    state = subsystem_seed(root_seed, subsystem).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) | (int(state[1]) >> 1))
