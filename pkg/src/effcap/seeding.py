"""Seed plumbing.

Every random draw in the package goes through :func:`rng`, which wraps
numpy's PCG64 bit generator. PCG64 output is specified independently of
platform, so a given seed reproduces the same stream everywhere.

Components derive their own seeds from one global seed with
:func:`derive_seed`, ``(seed + tag_hash(tag)) mod 2**64``, where the tag hash
is the first 8 bytes of SHA-256 of the tag, read big-endian.
"""

import hashlib

import numpy as np

_MASK = (1 << 64) - 1


def tag_hash(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "big")


def derive_seed(seed: int, tag: str) -> int:
    return (int(seed) + tag_hash(tag)) & _MASK


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK))
