"""Generational garbage collection over root namespaces.

New data lands in the active root. Rotation retires the active root
(read-only from then on) and opens a fresh one whose id feeds the dedup
salt, so post-rotation chunks never share names with older roots. Live
manifests migrate out of retired roots chunks-first, preserving the
closure invariant (a manifest in a root implies all its chunks are too).
Expired roots still serve reads, but any such read raises an alarm that
freezes deletion; only quiet, fully migrated, expired roots get deleted.

Liveness (which manifests still back existing functions) is supplied from
outside; there is deliberately no reference counting here.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Iterable

from chunkvault.errors import IntegrityError, LifecycleError, NotFoundError
from chunkvault.manifest import list_chunk_names
from chunkvault.store import (KIND_CHUNK, KIND_MANIFEST, ChunkStore, Root,
                              RootState)

DEFAULT_QUIET_PERIOD = 64  # logical ticks; matches a typical rotation period


class LivenessView:
    """External manifest-liveness oracle; default: everything is live."""

    def __init__(self, dead: Iterable[str] = ()):
        self._dead = set(dead)

    def is_live(self, manifest_id: str) -> bool:
        return manifest_id not in self._dead

    def mark_dead(self, manifest_id: str) -> None:
        self._dead.add(manifest_id)

    def mark_live(self, manifest_id: str) -> None:
        self._dead.discard(manifest_id)


@dataclass
class GcConfig:
    quiet_period: int = DEFAULT_QUIET_PERIOD
    active_roots: int = 1  # >1 enables the multi-active mode


class GcEngine:
    """Operator-driven lifecycle verbs over a ChunkStore."""

    def __init__(self, store: ChunkStore, config: GcConfig | None = None,
                 liveness: LivenessView | None = None):
        self.store = store
        self.config = config or GcConfig()
        self.liveness = liveness or LivenessView()

    # -- root selection -------------------------------------------------
    def ensure_active(self) -> Root:
        actives = self.store.active_roots()
        if actives:
            return actives[0]
        return self.store.create_root()

    def active_root_for(self, assignment_key: bytes | None = None) -> Root:
        """Pick the upload target root; multi-active mode assigns by
        modulo of a stable content hash."""
        actives = self.store.active_roots()
        if not actives:
            return self.store.create_root()
        if len(actives) == 1 or assignment_key is None:
            return actives[0]
        digest = hashlib.sha256(assignment_key).digest()
        return actives[int.from_bytes(digest[:8], "little") % len(actives)]

    # -- lifecycle verbs --------------------------------------------------
    def rotate(self) -> Root:
        """Open a fresh active root; retire the oldest active beyond the
        configured count. Empty retired roots complete migration at once."""
        new_root = self.store.create_root()
        actives = self.store.active_roots()
        while len(actives) > self.config.active_roots:
            oldest = actives.pop(0)
            if oldest.root_id == new_root.root_id:
                break
            self.store.set_root_state(oldest.root_id, RootState.RETIRED)
            if not self.store.list_names(oldest.root_id, KIND_MANIFEST):
                self.store.set_migration_complete(oldest.root_id)
        return new_root

    def migrate_manifest(self, manifest_id: str, from_root_id: str,
                         to_root_id: str | None = None,
                         progress: Callable[[int], None] | None = None) -> str:
        """Copy a live manifest and every chunk it references.

        Chunks copy before the manifest, so a crash mid-migration leaves
        the manifest still served from the source root and a retry
        converges (all copies are put-if-absent). Returns the target root.
        """
        src = self.store.require_root(from_root_id)
        if src.state != RootState.RETIRED:
            raise LifecycleError(
                f"migration source {from_root_id} must be retired, "
                f"is {src.state.value}")
        if not self.liveness.is_live(manifest_id):
            raise LifecycleError(f"manifest {manifest_id} is not live")
        if to_root_id is None:
            actives = self.store.active_roots()
            to_root_id = (actives[-1].root_id if actives
                          else self.store.create_root().root_id)

        manifest_bytes = self.store.get(from_root_id, KIND_MANIFEST, manifest_id)
        copied = 0
        for name in list_chunk_names(manifest_bytes):
            try:
                data = self.store.get(from_root_id, KIND_CHUNK, name)
            except NotFoundError as exc:
                raise IntegrityError(
                    f"migration of {manifest_id} aborted: chunk {name} "
                    f"missing from {from_root_id}") from exc
            self.store.put_if_absent(to_root_id, KIND_CHUNK, name, data,
                                     migration=True)
            copied += 1
            if progress is not None:
                progress(copied)
        self.store.put_if_absent(to_root_id, KIND_MANIFEST, manifest_id,
                                 manifest_bytes, migration=True)
        return to_root_id

    def sweep(self) -> list[tuple[str, str]]:
        """Migrate every live manifest out of every retired root, then mark
        fully drained roots migration-complete. Returns (manifest, root)
        pairs migrated."""
        migrated = []
        for root in list(self.store.roots_newest_first()):
            if root.state != RootState.RETIRED or root.migration_complete:
                continue
            for manifest_id in self.store.list_names(root.root_id, KIND_MANIFEST):
                if not self.liveness.is_live(manifest_id):
                    continue
                if self._migrated_elsewhere(manifest_id, root.root_id):
                    continue
                self.migrate_manifest(manifest_id, root.root_id)
                migrated.append((manifest_id, root.root_id))
            if not self.unmigrated_live_manifests(root.root_id):
                if not root.migration_complete:
                    self.store.set_migration_complete(root.root_id)
        return migrated

    def _migrated_elsewhere(self, manifest_id: str, root_id: str) -> bool:
        """True when the manifest lives in a strictly newer, still-alive root.

        Only forward copies count: a copy in an older root, or in an
        expired one, is itself on the deletion path, and treating it as
        migrated would let two roots justify each other's deletion and
        lose the manifest entirely.
        """
        src = self.store.require_root(root_id)
        return any(
            other.created_at > src.created_at
            and other.state in (RootState.ACTIVE, RootState.RETIRED)
            and self.store.exists(other.root_id, KIND_MANIFEST, manifest_id)
            for other in self.store.roots_newest_first())

    def unmigrated_live_manifests(self, root_id: str) -> list[str]:
        return [m for m in self.store.list_names(root_id, KIND_MANIFEST)
                if self.liveness.is_live(m)
                and not self._migrated_elsewhere(m, root_id)]

    def mark_migration_complete(self, root_id: str) -> Root:
        offenders = self.unmigrated_live_manifests(root_id)
        if offenders:
            raise LifecycleError(
                f"root {root_id} still holds unmigrated live manifests: "
                f"{', '.join(sorted(offenders))}")
        return self.store.set_migration_complete(root_id)

    def expire_root(self, root_id: str) -> Root:
        """Retired -> expired; reads stay allowed but raise alarms."""
        root = self.store.require_root(root_id)
        if root.state == RootState.RETIRED and not root.migration_complete:
            self.mark_migration_complete(root_id)
        return self.store.set_root_state(root_id, RootState.EXPIRED)

    def delete_root(self, root_id: str) -> Root:
        """Remove an expired root's objects once quiet and alarm-free."""
        root = self.store.require_root(root_id)
        if root.state != RootState.EXPIRED:
            raise LifecycleError(
                f"only expired roots may be deleted; {root_id} is "
                f"{root.state.value}")
        if self.store.alarms.deletions_blocked:
            raise LifecycleError(
                "deletions are blocked: unacknowledged expired-root reads")
        elapsed = self.store.clock - (root.expired_at or 0)
        if elapsed < self.config.quiet_period:
            raise LifecycleError(
                f"quiet period not elapsed for {root_id}: "
                f"{elapsed} < {self.config.quiet_period} ticks")
        self.store.delete_root_objects(root_id)
        return self.store.set_root_state(root_id, RootState.DELETED)

    # -- reads with on-access migration ------------------------------------
    def locate_manifest(self, manifest_id: str,
                        migrate_on_access: bool = True) -> tuple[str, bytes]:
        """Find a manifest searching newest roots first.

        Reading a live manifest from a retired root triggers its migration
        (the on-access path); the read itself is served either way.
        """
        for root in self.store.roots_newest_first():
            if root.state == RootState.DELETED:
                continue
            if self.store.exists(root.root_id, KIND_MANIFEST, manifest_id):
                data = self.store.get(root.root_id, KIND_MANIFEST, manifest_id)
                if (migrate_on_access and root.state == RootState.RETIRED
                        and self.liveness.is_live(manifest_id)):
                    self.migrate_manifest(manifest_id, root.root_id)
                return root.root_id, data
        raise NotFoundError(f"manifest {manifest_id} not found in any root")

    def read_chunk(self, name: str, preferred_root_id: str | None = None) -> bytes:
        """Fetch a chunk, preferring the manifest's own root."""
        order = []
        if preferred_root_id is not None:
            order.append(preferred_root_id)
        order.extend(r.root_id for r in self.store.roots_newest_first()
                     if r.root_id not in order)
        for root_id in order:
            root = self.store.roots.get(root_id)
            if root is None or root.state == RootState.DELETED:
                continue
            if self.store.exists(root_id, KIND_CHUNK, name):
                return self.store.get(root_id, KIND_CHUNK, name)
        raise NotFoundError(f"chunk {name} not found in any root")

    # -- inspection -----------------------------------------------------------
    def closure_violations(self, root_id: str) -> list[tuple[str, str]]:
        """(manifest, chunk) pairs where the root breaks the closure
        invariant; empty list means every referenced chunk is present."""
        missing = []
        for manifest_id in self.store.list_names(root_id, KIND_MANIFEST):
            data = self.store.get(root_id, KIND_MANIFEST, manifest_id)
            for name in list_chunk_names(data):
                if not self.store.exists(root_id, KIND_CHUNK, name):
                    missing.append((manifest_id, name))
        return missing

    def status(self) -> dict:
        return {
            "clock": self.store.clock,
            "alarms": {
                "deletions_blocked": self.store.alarms.deletions_blocked,
                "events": len(self.store.alarms.events),
            },
            "roots": [
                {
                    "root_id": r.root_id,
                    "state": r.state.value,
                    "created_at": r.created_at,
                    "migration_complete": r.migration_complete,
                    "expired_at": r.expired_at,
                    "manifests": len(self.store.list_names(r.root_id, KIND_MANIFEST))
                    if r.state != RootState.DELETED else 0,
                    "chunks": len(self.store.list_names(r.root_id, KIND_CHUNK))
                    if r.state != RootState.DELETED else 0,
                }
                for r in (self.store.roots[rid] for rid in self.store.root_order)
            ],
        }
