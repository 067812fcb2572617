"""Chunk creation pipeline: convergent-encrypt chunks, store them
put-if-absent, and seal the manifest.

The pipeline is streaming: plaintext chunks are consumed one at a time,
ciphertexts handed to the sink and dropped, so arbitrarily large images
build a manifest in constant memory (plus the chunk table itself).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Iterable

from chunkvault.crypto import ChunkKey, CustomerKey, Salt, derive_key, encrypt_chunk
from chunkvault.flatten import FlatImage, PlainChunk, iter_plain_chunks, validate_chunk_size
from chunkvault.manifest import SealedManifest, seal_manifest
from chunkvault.store import KIND_CHUNK, KIND_MANIFEST, ChunkStore, PutResult


def make_salt(static: bytes = b"", root_id: str | None = None) -> Salt:
    """Compose the dedup salt from static policy bytes and, under the
    per-root policy, the active root id."""
    if root_id is None:
        return Salt(static)
    sep = b"|" if static else b""
    return Salt(static + sep + root_id.encode("utf-8"))


@dataclass(frozen=True)
class IngestResult:
    manifest: SealedManifest
    manifest_id: str
    total_chunks: int
    zero_chunks: int
    nonzero_chunks: int
    unique_chunks: int

    @property
    def unique_fraction(self) -> float:
        return self.unique_chunks / self.nonzero_chunks if self.nonzero_chunks else 0.0


def ingest_chunks(plain_chunks: Iterable[PlainChunk], *, chunk_size: int,
                  image_length: int, salt: Salt, customer: CustomerKey,
                  sink: Callable[[str, bytes], PutResult] | None = None,
                  rng: Callable[[int], bytes] = os.urandom) -> IngestResult:
    """Encrypt a stream of plaintext chunks and seal their manifest.

    ``sink(name_hex, ciphertext)`` stores each non-zero chunk and reports
    whether it was new; without a sink every chunk counts as unique.
    """
    validate_chunk_size(chunk_size)
    records: list[tuple[bytes, bool, ChunkKey | None]] = []
    total = zero = unique = nonzero = 0
    for chunk in plain_chunks:
        total += 1
        if chunk.is_zero:
            zero += 1
            records.append((b"", True, None))
            continue
        nonzero += 1
        key = derive_key(chunk.data, salt)
        ciphertext, ct_hash = encrypt_chunk(chunk.data, key,
                                            expected_len=chunk_size)
        if sink is None:
            unique += 1
        elif sink(ct_hash.hex(), ciphertext) == PutResult.STORED:
            unique += 1
        records.append((ct_hash, False, key))

    sealed = seal_manifest(records, image_length=image_length,
                           chunk_size=chunk_size, salt=salt,
                           customer=customer, rng=rng)
    return IngestResult(manifest=sealed, manifest_id=sealed.manifest_id,
                        total_chunks=total, zero_chunks=zero,
                        nonzero_chunks=nonzero, unique_chunks=unique)


def upload_image(store: ChunkStore, root_id: str, image: FlatImage | bytes,
                 *, chunk_size: int, salt: Salt, customer: CustomerKey,
                 rng: Callable[[int], bytes] = os.urandom) -> IngestResult:
    """Upload a flat image into a root: chunks put-if-absent, manifest
    stored under its content id, upload recorded for dedup stats."""
    data = image.data if isinstance(image, FlatImage) else image

    def sink(name: str, ciphertext: bytes) -> PutResult:
        return store.put_if_absent(root_id, KIND_CHUNK, name, ciphertext)

    result = ingest_chunks(iter_plain_chunks(data, chunk_size),
                           chunk_size=chunk_size, image_length=len(data),
                           salt=salt, customer=customer, sink=sink, rng=rng)
    store.put_if_absent(root_id, KIND_MANIFEST, result.manifest_id,
                        result.manifest.to_bytes())
    store.record_upload(root_id, result.manifest_id,
                        total_nonzero=result.nonzero_chunks,
                        unique_count=result.unique_chunks)
    return result
