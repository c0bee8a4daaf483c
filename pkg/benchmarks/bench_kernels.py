"""Compare the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--texts N] [--rows N] [--repeat N]
"""

from __future__ import annotations

import argparse
import random
import sys
import timeit

import numpy as np

from memgov import _pykernels
from memgov.embedding import DEFAULT_DIM, tokenize
from memgov.simharness import make_corpus

try:
    from memgov import _kernels
except ImportError:
    _kernels = None


def bench(impl, texts: list[list[str]], matrix: np.ndarray, query: np.ndarray, repeat: int) -> dict[str, float]:
    def embed_all():
        for toks in texts:
            impl.hash_features(toks, DEFAULT_DIM)

    def pairwise():
        for row in matrix[:200]:
            impl.cosine(row, query)

    def scores():
        impl.cosine_scores(matrix, query)

    out = {}
    for name, fn, count in (("embed", embed_all, len(texts)), ("cosine", pairwise, min(200, len(matrix))),
                            ("cosine_scores", scores, len(matrix))):
        best = min(timeit.repeat(fn, number=1, repeat=repeat))
        out[name] = best / count * 1e6
    return out


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--texts", type=int, default=2000)
    ap.add_argument("--rows", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = random.Random(0)
    texts = [tokenize(t) for t in make_corpus(args.texts, rng, fact_len=16)]
    matrix = np.stack([_pykernels.hash_features(texts[i % len(texts)], DEFAULT_DIM) for i in range(args.rows)])
    query = _pykernels.hash_features(texts[0], DEFAULT_DIM)

    if _kernels is not None:
        # both backends must agree bit for bit before timing means anything
        for toks in texts[:200]:
            assert np.array_equal(_kernels.hash_features(toks, DEFAULT_DIM), _pykernels.hash_features(toks, DEFAULT_DIM))
        assert np.array_equal(_kernels.cosine_scores(matrix, query), _pykernels.cosine_scores(matrix, query))

    results = {"python": bench(_pykernels, texts, matrix, query, args.repeat)}
    if _kernels is not None:
        results["cython"] = bench(_kernels, texts, matrix, query, args.repeat)
    else:
        print("compiled extension not built; timing the fallback only", file=sys.stderr)

    print(f"{'kernel':<15}{'python us/op':>14}{'cython us/op':>14}{'speedup':>10}")
    for name in results["python"]:
        py = results["python"][name]
        if "cython" in results:
            cy = results["cython"][name]
            print(f"{name:<15}{py:>14.3f}{cy:>14.3f}{py / cy:>9.1f}x")
        else:
            print(f"{name:<15}{py:>14.3f}{'-':>14}{'-':>10}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
