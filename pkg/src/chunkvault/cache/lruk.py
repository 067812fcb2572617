"""LRU-k cache with byte-based capacity.

The eviction victim is the entry whose k-th most recent access is oldest.
Entries with fewer than k recorded accesses have infinite backward
k-distance: they rank older than any fully-observed entry and are evicted
first, least-recently-touched first. This is what makes the policy
scan-resistant for k >= 2: a one-shot scan can only displace other
one-shot entries, never the k-times-accessed hot set (while capacity
covers it). k=1 degenerates to plain LRU.

Eviction is O(log n) via an ordered dict for the sub-k group and a lazy
min-heap keyed by k-th-most-recent access for the full group.
"""

from __future__ import annotations

import heapq
from collections import OrderedDict, deque
from typing import Callable


class _Entry:
    __slots__ = ("value", "size", "hist", "gen")

    def __init__(self, value, size: int):
        self.value = value
        self.size = size
        self.hist: deque[int] = deque()
        self.gen = 0


class LRUKCache:
    def __init__(self, capacity_bytes: int, k: int = 2,
                 on_evict: Callable[[object], None] | None = None):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.capacity = capacity_bytes
        self.k = k
        self.on_evict = on_evict
        self.bytes_used = 0
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self._tick = 0
        self._entries: dict[object, _Entry] = {}
        self._partial: OrderedDict[object, None] = OrderedDict()
        self._full_heap: list[tuple[int, int, object]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name) -> bool:
        return name in self._entries

    def keys(self):
        return self._entries.keys()

    def _touch(self, name, entry: _Entry) -> None:
        self._tick += 1
        entry.hist.append(self._tick)
        if len(entry.hist) > self.k:
            entry.hist.popleft()
        if len(entry.hist) < self.k:
            self._partial.move_to_end(name)
        else:
            if name in self._partial:
                del self._partial[name]
            entry.gen += 1
            heapq.heappush(self._full_heap, (entry.hist[0], entry.gen, name))
            if len(self._full_heap) > 64 + 8 * len(self._entries):
                self._compact_heap()

    def _compact_heap(self) -> None:
        # lazy deletion lets stale rows pile up under heavy re-touching
        live = [(e.hist[0], e.gen, n) for n, e in self._entries.items()
                if len(e.hist) >= self.k]
        heapq.heapify(live)
        self._full_heap = live

    def get(self, name):
        entry = self._entries.get(name)
        if entry is None:
            self.misses += 1
            return None
        self.hits += 1
        self._touch(name, entry)
        return entry.value

    def peek(self, name):
        """Read without recording an access (no history side effects)."""
        entry = self._entries.get(name)
        return entry.value if entry is not None else None

    def put(self, name, value, size: int | None = None) -> bool:
        """Insert or refresh an entry; insertion counts as one access.

        Returns False (and stores nothing) when the item alone exceeds
        capacity.
        """
        size = len(value) if size is None else size
        existing = self._entries.get(name)
        if existing is not None:
            self.bytes_used += size - existing.size
            existing.value = value
            existing.size = size
            self._touch(name, existing)
            self._evict_to_capacity()
            return True
        if size > self.capacity:
            return False
        self._evict_to_capacity(incoming=size)
        entry = _Entry(value, size)
        self._entries[name] = entry
        self._partial[name] = None
        self.bytes_used += size
        self._touch(name, entry)
        return True

    def _evict_to_capacity(self, incoming: int = 0) -> None:
        while self.bytes_used + incoming > self.capacity and self._entries:
            self._evict_one()

    def _evict_one(self) -> None:
        if self._partial:
            name, _ = self._partial.popitem(last=False)
            self._remove(name)
            return
        while self._full_heap:
            _, gen, name = heapq.heappop(self._full_heap)
            entry = self._entries.get(name)
            if entry is not None and entry.gen == gen:
                self._remove(name)
                return

    def _remove(self, name) -> None:
        entry = self._entries.pop(name)
        self._partial.pop(name, None)
        self.bytes_used -= entry.size
        self.evictions += 1
        if self.on_evict is not None:
            self.on_evict(name)

    def invalidate(self, name) -> bool:
        """Drop an entry without counting it as an eviction."""
        entry = self._entries.pop(name, None)
        if entry is None:
            return False
        self._partial.pop(name, None)
        entry.gen = -1  # orphan any heap rows
        self.bytes_used -= entry.size
        return True

    def clear(self) -> None:
        self._entries.clear()
        self._partial.clear()
        self._full_heap.clear()
        self.bytes_used = 0

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0
