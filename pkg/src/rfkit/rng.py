"""Deterministic random-stream derivation.

All randomness in rfkit flows through ``stream(seed, purpose, index)``.
The generator is numpy's PCG64 keyed by a SeedSequence whose spawn key
encodes the purpose tag (CRC32 of the tag string) and a block index, so
projection banks, phases, dataset splits, and augmentation never share a
stream and every artifact is bit-reproducible from (seed, purpose, index).
"""
from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "derive_seed"]


def _tag_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Return an independent PCG64 generator for (seed, purpose, index)."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_tag_key(purpose), index))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, purpose: str, index: int = 0) -> int:
    """Derive a child seed (uint32) for handing to an independent worker."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_tag_key(purpose), index))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
