"""Deterministic, splittable random streams.

Every stochastic element in the package draws from a numpy Generator
derived from one integer experiment seed plus a tuple of scope strings
(e.g. ``("init", "layer.0.attn.wq.weight")``).  The derivation hashes the
scope, so adding parameters or reordering initialization never perturbs
unrelated streams, and results are stable across platforms.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, *scope: str) -> int:
    """Map (seed, scope...) to a stable 64-bit stream seed."""
    h = hashlib.sha256()
    h.update(str(int(seed)).encode("utf-8"))
    for part in scope:
        h.update(b"\x1f")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(seed: int, *scope: str) -> np.random.Generator:
    """Independent Generator for the given scope."""
    return np.random.default_rng(derive_seed(seed, *scope))
