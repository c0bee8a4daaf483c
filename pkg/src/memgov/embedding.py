"""Deterministic text embedding, cosine similarity and semantic drift.

Embeddings are signed feature-hashed counts of word unigrams and bigrams,
L2-normalised. Counts are small integers, so the squared norm is exact and
the resulting vector is bitwise reproducible on any IEEE-754 platform.
"""

from __future__ import annotations

import math
import re
from typing import Iterable, Sequence

import numpy as np

from . import kernels

DEFAULT_DIM = 256
_TOKEN_RE = re.compile(r"\w+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Unit-norm embedding of ``text``; the zero vector when it has no tokens."""
    if dim < 1:
        raise ValueError("dim must be positive")
    vec = kernels.hash_features(tokenize(text), dim)
    sq = float(np.dot(vec, vec))
    if sq == 0.0:
        return vec
    return vec / math.sqrt(sq)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; 0 when either operand is the zero vector."""
    return kernels.cosine(a, b)


def drift(state_text: str, reference_text: str, dim: int = DEFAULT_DIM) -> float:
    """Semantic drift ``1 - cos(E(state), E(reference))``, in [0, 2]."""
    return _drift(embed(state_text, dim), embed(reference_text, dim))


def _drift(a: np.ndarray, b: np.ndarray) -> float:
    # two empty states are identical, whatever cosine says about zero vectors
    if not a.any() and not b.any():
        return 0.0
    return 1.0 - cosine(a, b)


def join_texts(texts: Iterable[str]) -> str:
    """Canonical serialisation of a sequence of contents: single-space join."""
    return " ".join(texts)


def embed_state(contents: Sequence[str], mode: str = "concat", dim: int = DEFAULT_DIM) -> np.ndarray:
    """Embed a whole memory state.

    ``concat`` embeds the joined text; ``mean`` averages per-unit embeddings
    and renormalises.
    """
    if mode == "concat":
        return embed(join_texts(contents), dim)
    if mode == "mean":
        if not contents:
            return np.zeros(dim)
        acc = np.zeros(dim)
        for c in contents:
            acc += embed(c, dim)
        sq = float(np.dot(acc, acc))
        return acc if sq == 0.0 else acc / math.sqrt(sq)
    raise ValueError(f"unknown state embedding mode {mode!r}")


def state_drift(
    contents: Sequence[str],
    reference: Sequence[str],
    mode: str = "concat",
    dim: int = DEFAULT_DIM,
) -> float:
    return _drift(embed_state(contents, mode, dim), embed_state(reference, mode, dim))
