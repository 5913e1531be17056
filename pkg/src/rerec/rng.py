"""Derived random streams.

Every stochastic consumer gets its own ``numpy.random.Generator`` keyed by
``(master_seed, stage_name, index...)``. Keys are hashed with blake2b so the
streams are stable across processes and Python versions.
"""
import hashlib

import numpy as np


def derive_seed(seed, *keys):
    h = hashlib.blake2b(digest_size=16)
    h.update(repr(int(seed)).encode())
    for key in keys:
        h.update(b"\x1f")
        h.update(repr(key).encode())
    return int.from_bytes(h.digest(), "little")


def stream(seed, *keys):
    """Return a fresh generator for ``(seed, *keys)``."""
    return np.random.default_rng(derive_seed(seed, *keys))
