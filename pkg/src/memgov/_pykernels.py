"""Pure-Python reference kernels.

Bitwise-compatible with the compiled ``_kernels`` extension: same hash, same
accumulation order, no fused multiply-add.
"""

from __future__ import annotations

import math

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF
HASH_SEED = b"memgov/fh/v1\x00"

UNIGRAM_TAG = b"1:"
BIGRAM_TAG = b"2:"


def _fnv_update(h: int, data: bytes) -> int:
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def _fmix64(h: int) -> int:
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & MASK64
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & MASK64
    h ^= h >> 33
    return h


_SEEDED = _fnv_update(FNV_OFFSET, HASH_SEED)


def feature_hash(feature: bytes) -> int:
    """64-bit hash of an already-tagged feature byte string."""
    return _fmix64(_fnv_update(_SEEDED, feature))


def hash_features(tokens: list[str], dim: int) -> np.ndarray:
    """Signed bucket counts for word unigrams and bigrams."""
    out = [0.0] * dim
    prev = None
    for tok in tokens:
        cur = tok.encode("utf-8")
        h = feature_hash(UNIGRAM_TAG + cur)
        out[h % dim] += -1.0 if h >> 63 else 1.0
        if prev is not None:
            h = feature_hash(BIGRAM_TAG + prev + b" " + cur)
            out[h % dim] += -1.0 if h >> 63 else 1.0
        prev = cur
    return np.array(out, dtype=np.float64)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    dot = 0.0
    na = 0.0
    nb = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        dot += x * y
        na += x * x
        nb += y * y
    if na == 0.0 or nb == 0.0:
        return 0.0
    r = dot / (math.sqrt(na) * math.sqrt(nb))
    return min(1.0, max(-1.0, r))


def cosine_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    return np.array([cosine(row, query) for row in matrix], dtype=np.float64)
