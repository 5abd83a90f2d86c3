"""Deterministic seed derivation shared by all stochastic components.

Python's builtin hash() is salted per process, so derived seeds go through
a fixed cryptographic hash instead. Any worker count or execution order then
reproduces the same streams.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Map an arbitrary tuple of labels (ints, strings, floats) to a stable 63-bit seed."""
    canon = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(canon.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
