"""Manifest sealing: AEAD coverage, binary format, keyless chunk listing."""

import random

import pytest

from chunkvault.crypto import ChunkKey, CustomerKey, Salt
from chunkvault.errors import AuthenticationError, ValidationError
from chunkvault.manifest import (ChunkRecord, list_chunk_names, open_manifest,
                                 parse_manifest, seal_manifest)

CUSTOMER = CustomerKey("tenant-a", bytes(range(32)))
OTHER = CustomerKey("tenant-b", bytes(range(1, 33)))


def fixed_rng(n: int) -> bytes:
    return b"\x0b" * n


def sample_records(count=6, zero_every=3, seed=0):
    rng = random.Random(seed)
    out = []
    for i in range(count):
        if zero_every and i % zero_every == 2:
            out.append((b"", True, None))
        else:
            out.append((rng.randbytes(32), False, ChunkKey(rng.randbytes(32))))
    return out


def seal_sample(records=None, rng=fixed_rng, customer=CUSTOMER):
    records = sample_records() if records is None else records
    return seal_manifest(records, image_length=6 * 4096, chunk_size=4096,
                         salt=Salt(b"s|r0001"), customer=customer, rng=rng)


def test_seal_open_roundtrip_restores_every_key():
    records = sample_records()
    sealed = seal_sample(records)
    opened = open_manifest(sealed, CUSTOMER)
    assert len(opened.keys) == len(records)
    for (h, is_zero, key), got_key, rec in zip(records, opened.keys, opened.records):
        if is_zero:
            assert got_key is None and rec.is_zero
        else:
            assert got_key == key
            assert rec.ciphertext_hash == h


def test_roundtrip_through_bytes():
    sealed = seal_sample()
    parsed = parse_manifest(sealed.to_bytes())
    assert parsed == sealed
    opened = open_manifest(parsed.to_bytes(), CUSTOMER)
    assert opened.header.salt == b"s|r0001"
    assert opened.chunk_size == 4096
    assert opened.image_length == 6 * 4096


def test_wrong_customer_key_fails():
    sealed = seal_sample()
    with pytest.raises(AuthenticationError):
        open_manifest(sealed, OTHER)


def test_tamper_chunk_table_fails_auth():
    raw = bytearray(seal_sample().to_bytes())
    # flip one byte inside the first record's hash (records start after
    # magic+version+length+chunk_size+salt_len+salt+nonce+count)
    offset = 4 + 4 + 8 + 4 + 2 + 7 + 12 + 4 + 5
    raw[offset] ^= 0x01
    with pytest.raises(AuthenticationError):
        open_manifest(bytes(raw), CUSTOMER)


def test_reordering_records_fails_auth():
    records = sample_records(zero_every=0)
    sealed = seal_sample(records)
    swapped = list(sealed.records)
    swapped[0], swapped[1] = swapped[1], swapped[0]
    forged = sealed.__class__(header=sealed.header, records=tuple(swapped),
                              key_table_ciphertext=sealed.key_table_ciphertext,
                              tag=sealed.tag)
    with pytest.raises(AuthenticationError):
        open_manifest(forged, CUSTOMER)


def test_tamper_header_salt_fails_auth():
    sealed = seal_sample()
    raw = bytearray(sealed.to_bytes())
    raw[4 + 4 + 8 + 4 + 2] ^= 0xFF  # first salt byte
    with pytest.raises(AuthenticationError):
        open_manifest(bytes(raw), CUSTOMER)


def test_every_single_bit_flip_is_rejected_somewhere():
    rng = random.Random(11)
    raw = seal_sample().to_bytes()
    for _ in range(200):
        bit = rng.randrange(len(raw) * 8)
        corrupted = bytearray(raw)
        corrupted[bit // 8] ^= 1 << (bit % 8)
        with pytest.raises((AuthenticationError, ValidationError)):
            open_manifest(bytes(corrupted), CUSTOMER)


def test_list_chunk_names_needs_no_key():
    records = sample_records()
    sealed = seal_sample(records)
    names = list_chunk_names(sealed.to_bytes())
    expected = [h.hex() for (h, z, _) in records if not z]
    assert names == expected


def test_list_chunk_names_empty_manifest():
    sealed = seal_manifest([], image_length=0, chunk_size=4096,
                           salt=Salt(b""), customer=CUSTOMER, rng=fixed_rng)
    assert list_chunk_names(sealed) == []


def test_list_chunk_names_all_zero_manifest():
    sealed = seal_manifest([(b"", True, None)] * 4, image_length=4 * 4096,
                           chunk_size=4096, salt=Salt(b""), customer=CUSTOMER,
                           rng=fixed_rng)
    assert list_chunk_names(sealed) == []
    opened = open_manifest(sealed, CUSTOMER)
    assert all(k is None for k in opened.keys)


def test_zero_chunks_contribute_no_key_table_entry():
    only_zero = seal_manifest([(b"", True, None)] * 8, image_length=8 * 4096,
                              chunk_size=4096, salt=Salt(b""),
                              customer=CUSTOMER, rng=fixed_rng)
    # GCM of an empty key table is just the 16-byte tag
    assert len(only_zero.key_table_ciphertext) == 0


def test_record_offsets_are_implicit():
    sealed = seal_sample()
    for i, rec in enumerate(sealed.records):
        assert isinstance(rec, ChunkRecord)
        # record i corresponds to offset i * chunk_size by construction;
        # nothing else in the format stores offsets
    assert len(sealed.records) == 6


def test_missing_key_for_nonzero_record_rejected():
    with pytest.raises(ValidationError):
        seal_manifest([(b"\x01" * 32, False, None)], image_length=4096,
                      chunk_size=4096, salt=Salt(b""), customer=CUSTOMER,
                      rng=fixed_rng)


def test_truncated_manifest_rejected():
    raw = seal_sample().to_bytes()
    with pytest.raises(ValidationError):
        parse_manifest(raw[:-3])
    with pytest.raises(ValidationError):
        parse_manifest(raw + b"\x00")
    with pytest.raises(ValidationError):
        parse_manifest(b"NOPE" + raw[4:])


def test_manifest_overhead_1gib_scale():
    # 1 GiB image at 512 KiB chunks: 2048 records, overhead <= 0.03%
    rng = random.Random(13)
    records = [(rng.randbytes(32), False, ChunkKey(rng.randbytes(32)))
               for _ in range(2048)]
    sealed = seal_manifest(records, image_length=1 << 30, chunk_size=512 * 1024,
                           salt=Salt(b"r0001"), customer=CUSTOMER, rng=fixed_rng)
    size = len(sealed.to_bytes())
    assert size / (1 << 30) <= 0.0003
