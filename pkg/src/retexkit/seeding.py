"""Sub-seed derivation: one user seed fans out to per-item generators."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *keys: int | str) -> int:
    """Stable 64-bit sub-seed from (seed, keys); independent of call order and process."""
    h = hashlib.sha256(repr((int(seed),) + tuple(keys)).encode())
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(seed: int, *keys: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
