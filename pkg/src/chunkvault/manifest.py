"""Sealed chunk manifests.

A manifest maps image offsets to chunk names and per-chunk keys. The chunk
table (name + zero flag per record) stays plaintext so garbage collection
can list referenced chunks with no key at all; only the key table is
encrypted (AES-256-GCM under the customer key), and the whole document is
covered by the GCM tag via associated data.

Binary layout (all integers little-endian):

    magic "CMFT" | u32 version=1 | u64 image_length | u32 chunk_size |
    u16 salt_len + salt | 12-byte nonce | u32 record_count |
    records (32-byte hash + 1-byte flags, bit0 = is_zero) |
    u32 key_table_ciphertext_len + ciphertext | 16-byte tag

Zero chunks carry an all-zero hash, no key-table entry, and are skipped by
both naming and fetching: record i always corresponds to image offset
i * chunk_size.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from chunkvault.crypto import KEY_LEN, ChunkKey, CustomerKey, Salt
from chunkvault.errors import AuthenticationError, ValidationError

MAGIC = b"CMFT"
VERSION = 1
NONCE_LEN = 12
TAG_LEN = 16
HASH_LEN = 32
_FLAG_ZERO = 0x01


@dataclass(frozen=True)
class ChunkRecord:
    """One chunk-table entry: ciphertext hash + zero flag."""

    ciphertext_hash: bytes
    is_zero: bool

    @property
    def name(self) -> str:
        return self.ciphertext_hash.hex()


@dataclass(frozen=True)
class ManifestHeader:
    image_length: int
    chunk_size: int
    salt: bytes
    nonce: bytes


@dataclass(frozen=True)
class SealedManifest:
    """Parsed but unopened manifest; chunk table readable, keys sealed."""

    header: ManifestHeader
    records: tuple[ChunkRecord, ...]
    key_table_ciphertext: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        body = _serialize_public(self.header, self.records)
        body += struct.pack("<I", len(self.key_table_ciphertext))
        body += self.key_table_ciphertext
        body += self.tag
        return body

    @property
    def manifest_id(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


@dataclass(frozen=True)
class OpenManifest:
    """Authenticated manifest with the key table decrypted.

    ``keys[i]`` is None exactly when record i is a zero chunk.
    """

    header: ManifestHeader
    records: tuple[ChunkRecord, ...]
    keys: tuple[ChunkKey | None, ...]

    @property
    def chunk_size(self) -> int:
        return self.header.chunk_size

    @property
    def image_length(self) -> int:
        return self.header.image_length


def _serialize_public(header: ManifestHeader, records: Iterable[ChunkRecord]) -> bytes:
    recs = list(records)
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<Q", header.image_length),
        struct.pack("<I", header.chunk_size),
        struct.pack("<H", len(header.salt)),
        header.salt,
        header.nonce,
        struct.pack("<I", len(recs)),
    ]
    for rec in recs:
        flags = _FLAG_ZERO if rec.is_zero else 0
        parts.append(rec.ciphertext_hash)
        parts.append(bytes([flags]))
    return b"".join(parts)


def seal_manifest(chunks: Iterable[tuple[bytes, bool, ChunkKey | None]],
                  image_length: int, chunk_size: int, salt: Salt,
                  customer: CustomerKey,
                  rng: Callable[[int], bytes] = os.urandom) -> SealedManifest:
    """Seal an offset-ordered chunk list under a customer key.

    ``chunks`` yields (ciphertext_hash, is_zero, key) per record; zero
    chunks pass a None key and contribute nothing to the key table.
    ``rng`` is injectable so tests can pin the GCM nonce.
    """
    records = []
    key_table = bytearray()
    for ciphertext_hash, is_zero, key in chunks:
        if is_zero:
            records.append(ChunkRecord(b"\x00" * HASH_LEN, True))
            continue
        if len(ciphertext_hash) != HASH_LEN:
            raise ValidationError("ciphertext hash must be 32 bytes")
        if key is None:
            raise ValidationError("non-zero chunk record missing its key")
        records.append(ChunkRecord(bytes(ciphertext_hash), False))
        key_table += key.key

    nonce = rng(NONCE_LEN)
    if len(nonce) != NONCE_LEN:
        raise ValidationError(f"nonce must be {NONCE_LEN} bytes")
    header = ManifestHeader(image_length=image_length, chunk_size=chunk_size,
                            salt=salt.value, nonce=nonce)
    aad = _serialize_public(header, records)
    sealed = AESGCM(customer.key).encrypt(nonce, bytes(key_table), aad)
    return SealedManifest(header=header, records=tuple(records),
                          key_table_ciphertext=sealed[:-TAG_LEN],
                          tag=sealed[-TAG_LEN:])


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValidationError("truncated manifest")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def parse_manifest(data: bytes) -> SealedManifest:
    """Parse the binary form; no key needed, no authentication performed."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ValidationError("bad manifest magic")
    version = r.u32()
    if version != VERSION:
        raise ValidationError(f"unsupported manifest version {version}")
    image_length = r.u64()
    chunk_size = r.u32()
    salt = r.take(r.u16())
    nonce = r.take(NONCE_LEN)
    count = r.u32()
    records = []
    for i in range(count):
        h = r.take(HASH_LEN)
        flags = r.take(1)[0]
        if flags & ~_FLAG_ZERO:
            # strict: unknown flag bits would otherwise be normalized away
            # and escape the associated-data check
            raise ValidationError(f"record {i}: unknown flag bits {flags:#x}")
        records.append(ChunkRecord(h, bool(flags & _FLAG_ZERO)))
    key_ct = r.take(r.u32())
    tag = r.take(TAG_LEN)
    if r.pos != len(data):
        raise ValidationError("trailing bytes after manifest")
    return SealedManifest(
        header=ManifestHeader(image_length, chunk_size, salt, nonce),
        records=tuple(records), key_table_ciphertext=key_ct, tag=tag)


def open_manifest(sealed: SealedManifest | bytes, customer: CustomerKey) -> OpenManifest:
    """Authenticate the whole document and decrypt the key table.

    Any tampering with header, chunk table, or key table, or a wrong
    customer key, fails authentication.
    """
    if isinstance(sealed, (bytes, bytearray)):
        sealed = parse_manifest(bytes(sealed))
    aad = _serialize_public(sealed.header, sealed.records)
    try:
        key_table = AESGCM(customer.key).decrypt(
            sealed.header.nonce, sealed.key_table_ciphertext + sealed.tag, aad)
    except InvalidTag:
        raise AuthenticationError(
            f"manifest authentication failed under key id {customer.key_id!r}")
    nonzero = sum(1 for rec in sealed.records if not rec.is_zero)
    if len(key_table) != nonzero * KEY_LEN:
        raise ValidationError("key table length does not match chunk table")
    keys: list[ChunkKey | None] = []
    pos = 0
    for rec in sealed.records:
        if rec.is_zero:
            keys.append(None)
        else:
            keys.append(ChunkKey(key_table[pos:pos + KEY_LEN]))
            pos += KEY_LEN
    return OpenManifest(header=sealed.header, records=sealed.records,
                        keys=tuple(keys))


def list_chunk_names(sealed: SealedManifest | bytes) -> list[str]:
    """Names of all non-zero chunks in offset order; needs no key.

    This is the unauthenticated view garbage collection uses; callers
    needing integrity must open the manifest instead.
    """
    if isinstance(sealed, (bytes, bytearray)):
        sealed = parse_manifest(bytes(sealed))
    return [rec.name for rec in sealed.records if not rec.is_zero]


def iter_chunk_names(sealed: SealedManifest) -> Iterator[str]:
    for rec in sealed.records:
        if not rec.is_zero:
            yield rec.name
