"""Tiered caching: worker-local LRU-k (L1), erasure-coded distributed
stripe cache over consistent hashing (L2), origin fallback with
write-back (L3)."""

from chunkvault.cache.fetch import (FetchResult, FetchStats, LocalTransport,
                                    TieredFetcher, TIER_L1, TIER_L2, TIER_L3)
from chunkvault.cache.lruk import LRUKCache
from chunkvault.cache.node import CacheNode
from chunkvault.cache.ring import HashRing

__all__ = [
    "CacheNode", "FetchResult", "FetchStats", "HashRing", "LRUKCache",
    "LocalTransport", "TieredFetcher", "TIER_L1", "TIER_L2", "TIER_L3",
]
