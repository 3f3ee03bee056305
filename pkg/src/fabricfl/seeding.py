"""Deterministic seed fan-out.

A single session seed is stretched into independent per-purpose seeds so
that every stage (key generation, sharding, client holdouts, feature
ciphering, model init) stays reproducible without sharing RNG streams.
"""

from __future__ import annotations

import hashlib


def derive_seed(seed: int, *tags: object) -> int:
    """Derive a stable 63-bit sub-seed from a root seed and tag path."""
    material = ":".join([str(seed), *[str(t) for t in tags]]).encode()
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1
