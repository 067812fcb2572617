"""Distributed-cache node: stripe-granular LRU-k storage plus health flag."""

from __future__ import annotations

from chunkvault.cache.lruk import LRUKCache


class CacheNode:
    """One L2 node holding stripes keyed by (chunk_name, stripe_index)."""

    def __init__(self, node_id: str, capacity_bytes: int, k: int = 2):
        self.node_id = node_id
        self.up = True
        self.store = LRUKCache(capacity_bytes, k=k)
        self.gets = 0
        self.puts = 0

    def get_stripe(self, chunk_name: str, stripe_index: int) -> bytes | None:
        self.gets += 1
        return self.store.get((chunk_name, stripe_index))

    def put_stripe(self, chunk_name: str, stripe_index: int, data: bytes) -> bool:
        self.puts += 1
        return self.store.put((chunk_name, stripe_index), data)

    def flush(self) -> None:
        self.store.clear()

    def corrupt_stripe(self, chunk_name: str, stripe_index: int,
                       bit_index: int) -> bool:
        """Flip one bit of a cached stripe in place (fault injection)."""
        key = (chunk_name, stripe_index)
        data = self.store.peek(key)
        if data is None:
            return False
        flipped = bytearray(data)
        flipped[bit_index // 8] ^= 1 << (bit_index % 8)
        self.store.put(key, bytes(flipped))
        return True
