"""Parity kernel against a byte-at-a-time scalar oracle."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunkvault import parity
from chunkvault.parity import _xor_into_python, parity_of, xor_into


def scalar_xor_oracle(target: bytearray, source: bytes) -> bytearray:
    out = bytearray(target)
    for i in range(len(source)):
        out[i] ^= source[i]
    return out


def test_xor_identity_on_zeros():
    target = bytearray(64)
    source = bytes(range(64))
    xor_into(target, source)
    assert bytes(target) == source


def test_xor_involution():
    target = bytearray(b"\xa5" * 128)
    original = bytes(target)
    source = bytes(range(128))
    xor_into(target, source)
    xor_into(target, source)
    assert bytes(target) == original


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        xor_into(bytearray(8), b"\x00" * 9)


@given(st.binary(min_size=0, max_size=4096), st.integers(0, 2**32 - 1))
def test_matches_scalar_oracle(source, seed):
    import random
    rng = random.Random(seed)
    target = bytearray(rng.randrange(256) for _ in range(len(source)))
    expected = scalar_xor_oracle(target, source)
    xor_into(target, source)
    assert target == expected


@settings(max_examples=20)
@given(st.integers(1, 64))
def test_random_512k_multiple_of_64_matches_oracle(blocks):
    # random lengths that are multiples of 64, as the hot path sees them
    import random
    rng = random.Random(blocks)
    n = 64 * blocks
    target = bytearray(rng.randbytes(n))
    source = rng.randbytes(n)
    expected = scalar_xor_oracle(target, source)
    xor_into(target, source)
    assert target == expected


def test_backends_agree():
    import random
    rng = random.Random(7)
    for n in (0, 1, 63, 64, 4096, 524288):
        base = rng.randbytes(n)
        source = rng.randbytes(n)
        via_dispatch = bytearray(base)
        xor_into(via_dispatch, source)
        via_python = bytearray(base)
        _xor_into_python(via_python, source)
        assert via_dispatch == via_python


def test_python_fallback_rejects_mismatch():
    with pytest.raises(ValueError):
        _xor_into_python(bytearray(4), b"\x00" * 5)


def test_parity_of_multiple_buffers():
    bufs = [bytes([i]) * 32 for i in (3, 5, 9)]
    expected = bytes([3 ^ 5 ^ 9]) * 32
    assert bytes(parity_of(bufs)) == expected
    assert parity_of([]) == bytearray()


def test_backend_reported():
    assert parity.BACKEND in ("native", "python")
