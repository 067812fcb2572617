"""Convergent chunk encryption.

Keys are derived from chunk content (salted, domain-separated SHA-256), so
identical plaintexts under the same salt produce identical ciphertexts and
deduplicate by name without any key sharing. Chunk names are the lowercase
hex SHA-256 of the ciphertext.

AES-256-CTR with an all-zero IV is deterministic and safe here: collision
resistance of the KDF means a (key, IV) pair is only ever used for one
plaintext. Integrity comes from the SHA-256 name checked against an
authenticated manifest, not from an AEAD tag: key holders can forge AEAD
tags, but not second preimages.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from chunkvault.errors import IntegrityError, ValidationError

KEY_LEN = 32
MAX_SALT_LEN = 64
_KDF_PREFIX = b"cekv1"
_ZERO_IV = b"\x00" * 16


@dataclass(frozen=True)
class Salt:
    """Non-secret key-derivation input partitioning deduplication.

    Varying the salt (per time bucket, placement, or active root) makes
    otherwise-identical chunks encrypt to different ciphertexts, bounding
    the blast radius of any one shared chunk. It is recorded verbatim in
    the manifest header.
    """

    value: bytes = b""

    def __post_init__(self):
        if len(self.value) > MAX_SALT_LEN:
            raise ValidationError(
                f"salt length {len(self.value)} exceeds {MAX_SALT_LEN} bytes")


@dataclass(frozen=True)
class ChunkKey:
    key: bytes

    def __post_init__(self):
        if len(self.key) != KEY_LEN:
            raise ValidationError(f"chunk key must be {KEY_LEN} bytes")


@dataclass(frozen=True)
class CustomerKey:
    """Per-tenant manifest-sealing key from a pluggable provider."""

    key_id: str
    key: bytes

    def __post_init__(self):
        if len(self.key) != KEY_LEN:
            raise ValidationError(f"customer key must be {KEY_LEN} bytes")


def derive_key(plaintext: bytes, salt: Salt) -> ChunkKey:
    """Derive the convergent chunk key.

    key = SHA-256("cekv1" || u16-LE(len(salt)) || salt || plaintext).
    The prefix and explicit length field rule out ambiguity between
    (salt, plaintext) splits.
    """
    h = hashlib.sha256()
    h.update(_KDF_PREFIX)
    h.update(struct.pack("<H", len(salt.value)))
    h.update(salt.value)
    h.update(plaintext)
    return ChunkKey(h.digest())


def _ctr(key: ChunkKey):
    return Cipher(algorithms.AES(key.key), modes.CTR(_ZERO_IV))


def encrypt_chunk(plaintext: bytes, key: ChunkKey,
                  expected_len: int | None = None) -> tuple[bytes, bytes]:
    """Encrypt one chunk; returns (ciphertext, sha256(ciphertext)).

    ``expected_len`` enforces the fixed chunk size when the caller has one.
    """
    if expected_len is not None and len(plaintext) != expected_len:
        raise ValidationError(
            f"plaintext length {len(plaintext)} != chunk size {expected_len}")
    enc = _ctr(key).encryptor()
    ciphertext = enc.update(plaintext) + enc.finalize()
    return ciphertext, hashlib.sha256(ciphertext).digest()


def decrypt_chunk(ciphertext: bytes, key: ChunkKey, expected_hash: bytes,
                  chunk_index: int | None = None) -> bytes:
    """Verify sha256(ciphertext) against the manifest hash, then decrypt.

    Corrupt ciphertext never decrypts: the hash check happens first.
    """
    if hashlib.sha256(ciphertext).digest() != expected_hash:
        where = f" for chunk {chunk_index}" if chunk_index is not None else ""
        raise IntegrityError(f"ciphertext hash mismatch{where}")
    dec = _ctr(key).decryptor()
    return dec.update(ciphertext) + dec.finalize()


def chunk_name_hex(ciphertext_hash: bytes) -> str:
    """Chunk object name: lowercase hex of the ciphertext SHA-256."""
    return ciphertext_hash.hex()
