"""Convergent encryption: KDF oracle digests, cipher roundtrips, integrity."""

import hashlib
import random
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from chunkvault.crypto import (ChunkKey, CustomerKey, Salt, decrypt_chunk,
                               derive_key, encrypt_chunk)
from chunkvault.errors import IntegrityError, ValidationError

# Frozen oracle digests: sha256("cekv1" || u16le(len(salt)) || salt || pt)
# computed with hashlib over the explicit concatenation.
KDF_ZERO4096_EMPTY_SALT = \
    "1a699fd77101987341e64ec35fcd9ecc2f60fc44ba2cf58cb82ad73214a78e22"
KDF_SALT_A = "094738065af550cde1fcd8d02dae832988e6adee8162f296a4eb30e280de359c"
KDF_SALT_B = "386481fdbdc31775b541950658a6c5214d06f3f493a33532cd7525efaa471c6e"


def test_derive_key_deterministic():
    salt = Salt(b"bucket-7")
    pt = b"\x11" * 4096
    assert derive_key(pt, salt) == derive_key(pt, salt)


def test_derive_key_matches_independent_sha256():
    key = derive_key(b"\x00" * 4096, Salt(b""))
    assert key.key.hex() == KDF_ZERO4096_EMPTY_SALT
    # recompute the oracle in place to pin the concatenation layout
    oracle = hashlib.sha256(
        b"cekv1" + struct.pack("<H", 0) + b"" + b"\x00" * 4096).hexdigest()
    assert key.key.hex() == oracle


def test_derive_key_salts_distinct():
    pt = b"hello world, chunk payload"
    assert derive_key(pt, Salt(b"A")).key.hex() == KDF_SALT_A
    assert derive_key(pt, Salt(b"B")).key.hex() == KDF_SALT_B
    assert KDF_SALT_A != KDF_SALT_B


def test_salt_length_cap():
    Salt(b"x" * 64)
    with pytest.raises(ValidationError):
        Salt(b"x" * 65)


def test_chunk_key_length_enforced():
    with pytest.raises(ValidationError):
        ChunkKey(b"short")
    with pytest.raises(ValidationError):
        CustomerKey("k1", b"short")


@given(st.binary(min_size=1, max_size=8192))
def test_encrypt_decrypt_roundtrip(plaintext):
    key = derive_key(plaintext, Salt(b"s"))
    ciphertext, ct_hash = encrypt_chunk(plaintext, key)
    assert len(ciphertext) == len(plaintext)
    assert ct_hash == hashlib.sha256(ciphertext).digest()
    assert decrypt_chunk(ciphertext, key, ct_hash) == plaintext


def test_convergence_equal_inputs_equal_names():
    pt = random.Random(5).randbytes(4096)
    salt = Salt(b"same")
    k1 = derive_key(pt, salt)
    k2 = derive_key(pt, salt)
    ct1, h1 = encrypt_chunk(pt, k1)
    ct2, h2 = encrypt_chunk(pt, k2)
    assert ct1 == ct2 and h1 == h2


def test_different_salt_different_name():
    pt = random.Random(6).randbytes(4096)
    _, h1 = encrypt_chunk(pt, derive_key(pt, Salt(b"r0001")))
    _, h2 = encrypt_chunk(pt, derive_key(pt, Salt(b"r0002")))
    assert h1 != h2


def test_customer_key_never_influences_chunk_bytes():
    # chunk naming/encryption has no customer-key input at all: the same
    # (plaintext, salt) encrypts identically for any tenant
    pt = b"\x77" * 4096
    key = derive_key(pt, Salt(b"z"))
    ct_a, h_a = encrypt_chunk(pt, key)
    ct_b, h_b = encrypt_chunk(pt, key)
    assert ct_a == ct_b and h_a == h_b


def test_expected_len_enforced():
    key = derive_key(b"x", Salt(b""))
    with pytest.raises(ValidationError):
        encrypt_chunk(b"xyz", key, expected_len=4096)


def test_bit_flip_detected():
    pt = random.Random(7).randbytes(4096)
    key = derive_key(pt, Salt(b""))
    ciphertext, ct_hash = encrypt_chunk(pt, key)
    corrupted = bytearray(ciphertext)
    corrupted[123] ^= 0x10
    with pytest.raises(IntegrityError):
        decrypt_chunk(bytes(corrupted), key, ct_hash, chunk_index=9)


def test_truncated_ciphertext_detected():
    pt = b"\x01" * 4096
    key = derive_key(pt, Salt(b""))
    ciphertext, ct_hash = encrypt_chunk(pt, key)
    with pytest.raises(IntegrityError):
        decrypt_chunk(ciphertext[:-1], key, ct_hash)


def test_integrity_error_names_chunk_index():
    pt = b"\x01" * 64
    key = derive_key(pt, Salt(b""))
    ciphertext, ct_hash = encrypt_chunk(pt, key)
    with pytest.raises(IntegrityError, match="chunk 17"):
        decrypt_chunk(ciphertext + b"!", key, ct_hash, chunk_index=17)


@given(st.binary(min_size=1, max_size=2048), st.integers(0, 10**6))
def test_random_single_bit_corruption_always_detected(pt, seed):
    key = derive_key(pt, Salt(b"p"))
    ciphertext, ct_hash = encrypt_chunk(pt, key)
    rng = random.Random(seed)
    bit = rng.randrange(len(ciphertext) * 8)
    corrupted = bytearray(ciphertext)
    corrupted[bit // 8] ^= 1 << (bit % 8)
    with pytest.raises(IntegrityError):
        decrypt_chunk(bytes(corrupted), key, ct_hash)
