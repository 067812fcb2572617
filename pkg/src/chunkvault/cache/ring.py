"""Consistent-hash ring placing chunk stripes on cache nodes.

Each member node contributes vnodes_per_node positions on a 64-bit ring
(hash of "node|vnode"); a stripe key hashes to a position and walks
clockwise to the first member node. Stripes of the same chunk skip nodes
already assigned to its lower-indexed stripes, so the k+1 stripes land on
distinct nodes whenever membership allows; when it doesn't, reuse is
permitted rather than failing.

Membership changes (add/remove) remap only the affected ranges; node
health (up/down) is deliberately not part of placement -- requests to a
down member simply fail, keeping the work constant.
"""

from __future__ import annotations

import bisect
import hashlib

from chunkvault.errors import ValidationError

DEFAULT_VNODES = 100
_ASSIGN_CACHE_MAX = 1 << 18


def _h64(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


class HashRing:
    def __init__(self, node_ids=(), vnodes_per_node: int = DEFAULT_VNODES):
        self.vnodes_per_node = vnodes_per_node
        self._nodes: set[str] = set()
        self._ring: list[tuple[int, str]] = []
        self._positions: list[int] = []
        self._version = 0
        self._assign_cache: dict[tuple[str, int], tuple[int, list[str]]] = {}
        for node_id in node_ids:
            self.add_node(node_id)

    @property
    def nodes(self) -> set[str]:
        return set(self._nodes)

    def add_node(self, node_id: str) -> None:
        if node_id in self._nodes:
            raise ValidationError(f"node {node_id} already on the ring")
        self._nodes.add(node_id)
        for v in range(self.vnodes_per_node):
            bisect.insort(self._ring, (_h64(f"{node_id}|{v}"), node_id))
        self._rebuild()

    def remove_node(self, node_id: str) -> None:
        if node_id not in self._nodes:
            raise ValidationError(f"node {node_id} not on the ring")
        self._nodes.discard(node_id)
        self._ring = [(pos, n) for pos, n in self._ring if n != node_id]
        self._rebuild()

    def _rebuild(self) -> None:
        self._positions = [pos for pos, _ in self._ring]
        self._version += 1
        self._assign_cache.clear()

    def _successor(self, position: int, skip: set[str]) -> str | None:
        if not self._ring:
            return None
        start = bisect.bisect_right(self._positions, position) % len(self._ring)
        for step in range(len(self._ring)):
            node = self._ring[(start + step) % len(self._ring)][1]
            if node not in skip:
                return node
        return None

    def locate_stripes(self, chunk_name: str, count: int) -> list[str]:
        """Owner node for each stripe 0..count-1 of one chunk."""
        if not self._nodes:
            raise ValidationError("hash ring has no nodes")
        cached = self._assign_cache.get((chunk_name, count))
        if cached is not None and cached[0] == self._version:
            return cached[1]
        assigned: list[str] = []
        used: set[str] = set()
        for i in range(count):
            pos = _h64(f"{chunk_name}|{i}")
            node = self._successor(pos, used)
            if node is None:  # every member already used: allow reuse
                node = self._successor(pos, set())
            assigned.append(node)
            used.add(node)
            if len(used) == len(self._nodes):
                used = set()  # membership exhausted; later stripes start over
        if len(self._assign_cache) >= _ASSIGN_CACHE_MAX:
            self._assign_cache.clear()
        self._assign_cache[(chunk_name, count)] = (self._version, assigned)
        return assigned

    def locate(self, chunk_name: str, stripe_index: int) -> str:
        """Owner of one stripe; consistent with locate_stripes."""
        return self.locate_stripes(chunk_name, stripe_index + 1)[stripe_index]
