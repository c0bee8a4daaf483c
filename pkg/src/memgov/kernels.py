"""Kernel backend selection.

The compiled extension is used when importable; setting ``MEMGOV_PURE_PYTHON=1``
forces the pure-Python fallback.
"""

from __future__ import annotations

import os

if os.environ.get("MEMGOV_PURE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _pykernels as _impl

        BACKEND = "python"

hash_features = _impl.hash_features
cosine = _impl.cosine
cosine_scores = _impl.cosine_scores
feature_hash = _impl.feature_hash

__all__ = ["BACKEND", "hash_features", "cosine", "cosine_scores", "feature_hash"]
