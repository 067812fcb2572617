"""Parity (XOR accumulate) kernel with backend selection at import.

The compiled Cython kernel is preferred; when the extension was not built
we fall back to a pure-Python implementation that XORs whole buffers as
big integers (orders of magnitude faster than a byte loop, still far
slower than the compiled kernel -- see benchmarks/parity_bench.py).

Both backends implement the same contract: in-place ``target[i] ^= source[i]``
over equal-length buffers.
"""

from __future__ import annotations


def _xor_into_python(target, source) -> None:
    n = len(target)
    if len(source) != n:
        raise ValueError(f"length mismatch: target {n} vs source {len(source)}")
    if n == 0:
        return
    acc = int.from_bytes(target, "little") ^ int.from_bytes(source, "little")
    target[:] = acc.to_bytes(n, "little")


try:
    from chunkvault._xorblock import xor_into as _kernel

    BACKEND = "native"
except ImportError:  # extension not built
    _kernel = _xor_into_python
    BACKEND = "python"


def xor_into(target, source) -> None:
    """In-place XOR accumulate: target[i] ^= source[i].

    ``target`` must be a writable buffer (bytearray or writable memoryview);
    ``source`` any bytes-like of the same length. Raises ValueError on a
    length mismatch.
    """
    _kernel(target, source)


def parity_of(buffers) -> bytearray:
    """XOR of an iterable of equal-length buffers (zeros for empty input)."""
    acc: bytearray | None = None
    for buf in buffers:
        if acc is None:
            acc = bytearray(buf)
        else:
            xor_into(acc, buf)
    return acc if acc is not None else bytearray()
