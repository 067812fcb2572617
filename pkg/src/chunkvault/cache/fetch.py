"""Tiered chunk fetch: L1 -> erasure-coded L2 -> origin with write-back.

The L2 path does constant work: all k+1 stripe requests are issued on
every fetch (no retries, no extras on failure), and the chunk is ready as
soon as any k stripes arrive. One slow or down node therefore costs
nothing: its stripe is simply the one not waited for. When fewer than k
stripes are obtainable, or every reconstructable combination fails the
hash check, the full ciphertext comes from the origin, is verified, and
all k+1 stripes are written back into L2.

Every returned chunk is hash-verified against its manifest record before
use, whatever tier produced it.
"""

from __future__ import annotations

import hashlib
import itertools
import time
from dataclasses import dataclass
from typing import Callable, Protocol

from chunkvault.cache.lruk import LRUKCache
from chunkvault.cache.node import CacheNode
from chunkvault.cache.ring import HashRing
from chunkvault.crypto import ChunkKey, decrypt_chunk
from chunkvault.erasure import encode
from chunkvault.errors import IntegrityError, NotFoundError
from chunkvault.manifest import ChunkRecord
from chunkvault.parity import parity_of, xor_into

TIER_L1 = "L1"
TIER_L2 = "L2"
TIER_L3 = "L3"


class StripeTransport(Protocol):
    """Request interface to L2 nodes; get returns (ok, data, latency).

    ok=False means the node failed to answer (down); ok=True with data=None
    is an answered miss. Latency is in whatever clock the transport models.
    """

    def get_stripe(self, node_id: str, chunk_name: str,
                   stripe_index: int) -> tuple[bool, bytes | None, float]: ...

    def put_stripe(self, node_id: str, chunk_name: str, stripe_index: int,
                   data: bytes) -> tuple[bool, float]: ...


class LocalTransport:
    """Direct in-process calls to CacheNode objects, wall-clock timed."""

    def __init__(self, nodes: dict[str, CacheNode]):
        self.nodes = nodes

    def get_stripe(self, node_id, chunk_name, stripe_index):
        start = time.perf_counter()
        node = self.nodes[node_id]
        if not node.up:
            return False, None, time.perf_counter() - start
        data = node.get_stripe(chunk_name, stripe_index)
        return True, data, time.perf_counter() - start

    def put_stripe(self, node_id, chunk_name, stripe_index, data):
        start = time.perf_counter()
        node = self.nodes[node_id]
        if not node.up:
            return False, time.perf_counter() - start
        node.put_stripe(chunk_name, stripe_index, data)
        return True, time.perf_counter() - start


@dataclass(slots=True)
class FetchResult:
    plaintext: bytes | None
    ciphertext: bytes | None
    source_tier: str
    latency: float
    l2_requests: int
    corrupt_sources: list
    timings: dict


@dataclass
class FetchStats:
    l1_hits: int = 0
    l2_hits: int = 0
    origin_fetches: int = 0
    l2_requests_issued: int = 0
    corruptions_detected: int = 0
    integrity_failures: int = 0

    def total_fetches(self) -> int:
        return self.l1_hits + self.l2_hits + self.origin_fetches


class TieredFetcher:
    """Fetch pipeline over an optional L1, an L2 ring, and an origin reader.

    ``redundant=False`` selects the k-of-k baseline (no parity request),
    used by the simulator for tail-latency comparisons. ``keep_plaintext=
    False`` skips decryption for metadata-only consumers (the simulator):
    CTR mode is length-preserving and cannot affect control flow, so L1
    then caches the same-size ciphertext instead. ``origin_cost`` supplies
    the modeled latency of an origin fetch (zero for real local stores).
    """

    def __init__(self, l1: LRUKCache | None, ring: HashRing | None,
                 transport: StripeTransport | None,
                 origin_reader: Callable[[str], bytes],
                 k: int = 4, redundant: bool = True,
                 keep_plaintext: bool = True,
                 origin_cost: Callable[[str], float] | None = None):
        self.l1 = l1
        self.ring = ring
        self.transport = transport
        self.origin_reader = origin_reader
        self.k = k
        self.redundant = redundant
        self.keep_plaintext = keep_plaintext
        self.origin_cost = origin_cost
        self.stats = FetchStats()

    @property
    def _l2_available(self) -> bool:
        return (self.ring is not None and self.transport is not None
                and bool(self.ring.nodes))

    # -- pipeline -------------------------------------------------------
    def fetch(self, record: ChunkRecord, key: ChunkKey | None) -> FetchResult:
        if record.is_zero:
            raise ValueError("zero chunks are elided; nothing to fetch")
        name = record.name
        timings: dict[str, float] = {}

        if self.l1 is not None:
            cached = self.l1.get(name)
            if cached is not None:
                self.stats.l1_hits += 1
                return FetchResult(
                    plaintext=cached if self.keep_plaintext else None,
                    ciphertext=None if self.keep_plaintext else cached,
                    source_tier=TIER_L1, latency=0.0, l2_requests=0,
                    corrupt_sources=[], timings=timings)

        corrupt: list[str] = []
        l2_issued = 0
        l2_window = 0.0
        if self._l2_available:
            ciphertext, l2_issued, completion, l2_window, corrupt = \
                self._fetch_l2(name, record.ciphertext_hash)
            self.stats.l2_requests_issued += l2_issued
            if ciphertext is not None:
                timings["l2"] = completion
                self.stats.l2_hits += 1
                return self._finish(record, key, ciphertext, TIER_L2,
                                    completion, l2_issued, corrupt, timings)

        # origin fallback: full ciphertext, verified, stripes written back
        ciphertext = self.origin_reader(name)
        if ciphertext is None:
            raise NotFoundError(f"chunk {name} missing from origin")
        if hashlib.sha256(ciphertext).digest() != record.ciphertext_hash:
            self.stats.integrity_failures += 1
            raise IntegrityError(f"origin bytes for chunk {name} fail hash check")
        origin_wait = self.origin_cost(name) if self.origin_cost else 0.0
        timings["origin"] = origin_wait
        total = l2_window + origin_wait
        self.stats.origin_fetches += 1
        if self._l2_available:
            self._write_back(name, ciphertext)
        return self._finish(record, key, ciphertext, TIER_L3, total,
                            l2_issued, corrupt, timings)

    def _fetch_l2(self, name: str, expected_hash: bytes):
        """Issue every stripe request, reconstruct from the earliest
        verifying combination.

        Returns (ciphertext|None, issued, completion_latency, full_window,
        corrupt_node_ids). The combination search starts at the first k
        arrivals and widens only if the hash check fails, so corruption
        costs extra reconstruction attempts, never extra requests.
        """
        want = self.k + 1 if self.redundant else self.k
        nodes = self.ring.locate_stripes(name, want)
        responses = []
        for idx, node_id in enumerate(nodes):
            ok, data, latency = self.transport.get_stripe(node_id, name, idx)
            responses.append((idx, node_id, ok, data, latency))
        issued = len(responses)
        window = max((r[4] for r in responses), default=0.0)
        arrived = sorted((r for r in responses if r[2] and r[3] is not None),
                         key=lambda r: r[4])
        if len(arrived) < self.k:
            return None, issued, 0.0, window, []

        for combo in itertools.combinations(arrived, self.k):
            candidate = self._reconstruct_combo(combo)
            if hashlib.sha256(candidate).digest() == expected_hash:
                completion = max(r[4] for r in combo)
                unused = [r for r in arrived if r not in combo]
                corrupt = self._diff_stripes(candidate, unused)
                if corrupt:
                    self.stats.corruptions_detected += 1
                return candidate, issued, completion, window, corrupt

        self.stats.corruptions_detected += 1
        return None, issued, 0.0, window, [r[1] for r in arrived]

    def _reconstruct_combo(self, combo) -> bytes:
        """Reconstruct from exactly k responses (validated upstream)."""
        k = self.k
        data: list[bytes | None] = [None] * k
        parity = None
        for idx, _node, _ok, stripe, _lat in combo:
            if idx < k:
                data[idx] = stripe
            else:
                parity = stripe
        if parity is None:
            return b"".join(data)  # type: ignore[arg-type]
        hole = data.index(None)
        acc = bytearray(parity)
        for i, stripe in enumerate(data):
            if i != hole:
                xor_into(acc, stripe)
        data[hole] = bytes(acc)
        return b"".join(data)  # type: ignore[arg-type]

    def _diff_stripes(self, good_ciphertext: bytes, suspects) -> list[str]:
        """Name nodes whose stripes disagree with the verified chunk.

        Stripes inside a verifying combination are necessarily correct, so
        only the leftovers need checking.
        """
        corrupt = []
        size = len(good_ciphertext) // self.k
        view = memoryview(good_ciphertext)
        for idx, node_id, _ok, data, _lat in suspects:
            if idx < self.k:
                expected = view[idx * size:(idx + 1) * size]
                if data != expected:
                    corrupt.append(node_id)
            else:
                parity = parity_of(view[i * size:(i + 1) * size]
                                   for i in range(self.k))
                if data != bytes(parity):
                    corrupt.append(node_id)
        return corrupt

    def _write_back(self, name: str, ciphertext: bytes) -> None:
        stripes = encode(ciphertext, k=self.k).stripes
        nodes = self.ring.locate_stripes(name, self.k + 1)
        for idx in range(self.k + 1):
            self.transport.put_stripe(nodes[idx], name, idx, stripes[idx])

    def _finish(self, record, key, ciphertext, tier, latency, l2_issued,
                corrupt, timings) -> FetchResult:
        if self.keep_plaintext:
            if key is None:
                raise ValueError(f"no key available for chunk {record.name}")
            plaintext = decrypt_chunk(ciphertext, key, record.ciphertext_hash)
            payload = plaintext
        else:
            plaintext = None
            payload = ciphertext
        if self.l1 is not None:
            self.l1.put(record.name, payload)
        return FetchResult(plaintext=plaintext,
                           ciphertext=None if self.keep_plaintext else ciphertext,
                           source_tier=tier, latency=latency,
                           l2_requests=l2_issued, corrupt_sources=corrupt,
                           timings=timings)
