# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled byte-wise XOR accumulate kernel.

The plain C loop below is autovectorized by the compiler at -O3; the
word-at-a-time behaviour the hot path needs comes from the compiler,
not from manual unrolling.
"""


def xor_into(unsigned char[::1] target, const unsigned char[::1] source):
    """target[i] ^= source[i] for every i. Buffers must be equal length."""
    cdef Py_ssize_t n = target.shape[0]
    if source.shape[0] != n:
        raise ValueError(
            f"length mismatch: target {n} vs source {source.shape[0]}")
    cdef Py_ssize_t i
    for i in range(n):
        target[i] ^= source[i]
