# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: feature hashing and cosine scoring.

Mirrors ``_pykernels`` bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdint cimport uint64_t

cnp.import_array()

cdef uint64_t FNV_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t FNV_PRIME = 0x100000001B3ULL
cdef bytes HASH_SEED = b"memgov/fh/v1\x00"


cdef inline uint64_t _fnv_update(uint64_t h, const unsigned char* data, Py_ssize_t n) nogil:
    cdef Py_ssize_t i
    for i in range(n):
        h ^= data[i]
        h *= FNV_PRIME
    return h


cdef inline uint64_t _fmix64(uint64_t h) nogil:
    h ^= h >> 33
    h *= 0xFF51AFD7ED558CCDULL
    h ^= h >> 33
    h *= 0xC4CEB9FE1A85EC53ULL
    h ^= h >> 33
    return h


cdef uint64_t _SEEDED = _fnv_update(FNV_OFFSET, HASH_SEED, len(HASH_SEED))


def feature_hash(bytes feature):
    return _fmix64(_fnv_update(_SEEDED, feature, len(feature)))


cdef inline void _add(double* out, uint64_t h, Py_ssize_t dim) nogil:
    if h >> 63:
        out[h % <uint64_t>dim] -= 1.0
    else:
        out[h % <uint64_t>dim] += 1.0


def hash_features(list tokens, Py_ssize_t dim):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] arr = np.zeros(dim, dtype=np.float64)
    cdef double* out = <double*>arr.data
    cdef bytes prev = None
    cdef bytes cur
    cdef uint64_t h, hp
    cdef const unsigned char* p
    for tok in tokens:
        cur = (<str>tok).encode("utf-8")
        p = cur
        h = _fnv_update(_SEEDED, b"1:", 2)
        h = _fnv_update(h, p, len(cur))
        _add(out, _fmix64(h), dim)
        if prev is not None:
            hp = _fnv_update(_SEEDED, b"2:", 2)
            hp = _fnv_update(hp, prev, len(prev))
            hp = _fnv_update(hp, b" ", 1)
            hp = _fnv_update(hp, p, len(cur))
            _add(out, _fmix64(hp), dim)
        prev = cur
    return arr


cdef inline double _cosine(const double* a, const double* b, Py_ssize_t n) nogil:
    cdef double dot = 0.0, na = 0.0, nb = 0.0, r
    cdef Py_ssize_t i
    for i in range(n):
        dot += a[i] * b[i]
        na += a[i] * a[i]
        nb += b[i] * b[i]
    if na == 0.0 or nb == 0.0:
        return 0.0
    r = dot / (sqrt(na) * sqrt(nb))
    if r > 1.0:
        return 1.0
    if r < -1.0:
        return -1.0
    return r


def cosine(a, b):
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    if av.shape[0] != bv.shape[0]:
        raise ValueError("dimension mismatch")
    if av.shape[0] == 0:
        return 0.0
    return _cosine(&av[0], &bv[0], av.shape[0])


def cosine_scores(matrix, query):
    cdef const double[:, ::1] m = np.ascontiguousarray(matrix, dtype=np.float64)
    cdef const double[::1] q = np.ascontiguousarray(query, dtype=np.float64)
    cdef Py_ssize_t n = m.shape[0], d = m.shape[1], i
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    if n == 0 or d == 0:
        return out
    if d != q.shape[0]:
        raise ValueError("dimension mismatch")
    with nogil:
        for i in range(n):
            o[i] = _cosine(&m[i, 0], &q[0], d)
    return out
