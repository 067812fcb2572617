"""Durable content-addressed backing store (L3) organized into roots.

Objects (chunks and manifests) are immutable and written put-if-absent;
each lives in exactly one root namespace with the lifecycle
active -> retired -> expired -> deleted. Reads from an expired root are
served but raise an alarm that blocks all further deletions until an
operator acknowledges -- the last line of defense against a garbage
collection bug deleting live data.

Two backends share the interface: an in-memory store for tests and the
simulator, and a directory-backed store laid out as
``<store>/<root_id>/{chunks,manifests}/<hex-name>`` with a small metadata
document (root states, alarm log, upload log) alongside.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from enum import Enum

from chunkvault.errors import (IntegrityError, LifecycleError, NotFoundError,
                               ValidationError)
from chunkvault.stats import ecdf, mean, percentile

KIND_CHUNK = "chunks"
KIND_MANIFEST = "manifests"
_KINDS = (KIND_CHUNK, KIND_MANIFEST)


class RootState(str, Enum):
    ACTIVE = "active"
    RETIRED = "retired"
    EXPIRED = "expired"
    DELETED = "deleted"


_LEGAL_TRANSITIONS = {
    RootState.ACTIVE: {RootState.RETIRED},
    RootState.RETIRED: {RootState.EXPIRED},
    RootState.EXPIRED: {RootState.DELETED},
    RootState.DELETED: set(),
}


class PutResult(Enum):
    STORED = "stored"
    ALREADY_PRESENT = "already_present"


@dataclass
class Root:
    root_id: str
    state: RootState = RootState.ACTIVE
    created_at: int = 0
    migration_complete: bool = False
    expired_at: int | None = None

    def to_dict(self) -> dict:
        return {"root_id": self.root_id, "state": self.state.value,
                "created_at": self.created_at,
                "migration_complete": self.migration_complete,
                "expired_at": self.expired_at}

    @staticmethod
    def from_dict(d: dict) -> "Root":
        return Root(root_id=d["root_id"], state=RootState(d["state"]),
                    created_at=d["created_at"],
                    migration_complete=d["migration_complete"],
                    expired_at=d.get("expired_at"))


@dataclass(frozen=True)
class AlarmEvent:
    root_id: str
    name: str
    time: int


class AlarmLog:
    """Expired-root access log; unacknowledged events block deletions."""

    def __init__(self):
        self.events: list[AlarmEvent] = []
        self._acked = 0

    @property
    def deletions_blocked(self) -> bool:
        return len(self.events) > self._acked

    def record(self, event: AlarmEvent) -> None:
        self.events.append(event)

    def acknowledge(self) -> int:
        """Operator ack; returns how many events were cleared."""
        cleared = len(self.events) - self._acked
        self._acked = len(self.events)
        return cleared

    def to_dict(self) -> dict:
        return {"acked": self._acked,
                "events": [[e.root_id, e.name, e.time] for e in self.events]}

    def load_dict(self, d: dict) -> None:
        self._acked = d["acked"]
        self.events = [AlarmEvent(*row) for row in d["events"]]


@dataclass(frozen=True)
class UploadRecord:
    root_id: str
    manifest_id: str
    total_nonzero: int
    unique_count: int

    @property
    def unique_fraction(self) -> float:
        return self.unique_count / self.total_nonzero if self.total_nonzero else 0.0


@dataclass(frozen=True)
class DedupStats:
    """Per-root upload deduplication summary (cf. the creation-time CDF)."""

    uploads: int
    zero_unique_fraction: float
    unique_fractions: tuple[float, ...]
    nontrivial_mean: float
    nontrivial_median: float
    cdf: tuple[tuple[float, float], ...]  # eCDF over non-trivial uploads


class ChunkStore:
    """Root-namespaced put-if-absent object store; see module docstring.

    Subclasses provide the raw object I/O; this base owns root lifecycle,
    alarms, logical time, and the upload log. Operations are linearizable
    per (root_id, name) -- a process-wide lock serializes mutation.
    """

    def __init__(self):
        self.roots: dict[str, Root] = {}
        self.root_order: list[str] = []
        self._alive_order: list[str] = []  # root_order minus deleted roots
        self.alarms = AlarmLog()
        self.uploads: list[UploadRecord] = []
        self.clock = 0
        self._root_seq = 0
        self._lock = threading.RLock()

    # -- storage hooks ------------------------------------------------
    def _obj_write(self, root_id: str, kind: str, name: str, data: bytes) -> None:
        raise NotImplementedError

    def _obj_read(self, root_id: str, kind: str, name: str) -> bytes | None:
        raise NotImplementedError

    def _obj_exists(self, root_id: str, kind: str, name: str) -> bool:
        raise NotImplementedError

    def _obj_list(self, root_id: str, kind: str) -> list[str]:
        raise NotImplementedError

    def _obj_delete_all(self, root_id: str) -> None:
        raise NotImplementedError

    def _persist(self) -> None:
        pass

    # -- time and roots -----------------------------------------------
    def tick(self) -> int:
        self.clock += 1
        return self.clock

    def create_root(self, root_id: str | None = None) -> Root:
        with self._lock:
            if root_id is None:
                self._root_seq += 1
                root_id = f"r{self._root_seq:04d}"
            if root_id in self.roots:
                raise ValidationError(f"root {root_id} already exists")
            root = Root(root_id=root_id, created_at=self.tick())
            self.roots[root_id] = root
            self.root_order.append(root_id)
            self._alive_order.append(root_id)
            self._persist()
            return root

    def require_root(self, root_id: str) -> Root:
        root = self.roots.get(root_id)
        if root is None:
            raise NotFoundError(f"unknown root {root_id}")
        return root

    def active_roots(self) -> list[Root]:
        return [self.roots[r] for r in self.root_order
                if self.roots[r].state == RootState.ACTIVE]

    def roots_newest_first(self) -> list[Root]:
        """Non-deleted roots, newest first."""
        return [self.roots[r] for r in reversed(self._alive_order)]

    def set_root_state(self, root_id: str, new_state: RootState) -> Root:
        with self._lock:
            root = self.require_root(root_id)
            if new_state not in _LEGAL_TRANSITIONS[root.state]:
                raise LifecycleError(
                    f"illegal root transition {root.state.value} -> {new_state.value} "
                    f"for {root_id}")
            if new_state == RootState.EXPIRED and not root.migration_complete:
                raise LifecycleError(
                    f"root {root_id} cannot expire before migration completes")
            root.state = new_state
            if new_state == RootState.EXPIRED:
                root.expired_at = self.tick()
            elif new_state == RootState.DELETED:
                self._alive_order.remove(root_id)
            self._persist()
            return root

    def set_migration_complete(self, root_id: str) -> Root:
        with self._lock:
            root = self.require_root(root_id)
            if root.state != RootState.RETIRED:
                raise LifecycleError(
                    f"migration_complete only applies to retired roots; "
                    f"{root_id} is {root.state.value}")
            root.migration_complete = True
            self._persist()
            return root

    # -- objects --------------------------------------------------------
    def put_if_absent(self, root_id: str, kind: str, name: str, data: bytes,
                      migration: bool = False) -> PutResult:
        """Idempotent write; existing names are never replaced.

        New data lands only in active roots; retired roots accept writes
        only from GC migration. A name collision with different bytes is
        an integrity alarm (impossible under honest content addressing).
        """
        self._check_kind(kind)
        with self._lock:
            root = self.require_root(root_id)
            if root.state in (RootState.EXPIRED, RootState.DELETED):
                raise LifecycleError(
                    f"cannot write to {root.state.value} root {root_id}")
            if root.state == RootState.RETIRED and not migration:
                raise LifecycleError(
                    f"root {root_id} is retired; only migration may write to it")
            self.tick()
            existing = self._obj_read(root_id, kind, name)
            if existing is not None:
                if existing != data:
                    raise IntegrityError(
                        f"name collision with different bytes for "
                        f"{kind}/{name} in root {root_id}")
                return PutResult.ALREADY_PRESENT
            self._obj_write(root_id, kind, name, bytes(data))
            return PutResult.STORED

    def get(self, root_id: str, kind: str, name: str, verify: bool = False) -> bytes:
        """Read stored bytes; expired-root reads raise the alarm.

        ``verify`` re-checks content addressing (sha256(bytes) == name).
        """
        self._check_kind(kind)
        with self._lock:
            root = self.require_root(root_id)
            if root.state == RootState.DELETED:
                raise NotFoundError(f"root {root_id} is deleted")
            self.tick()
            data = self._obj_read(root_id, kind, name)
            if data is None:
                raise NotFoundError(f"{kind}/{name} not found in root {root_id}")
            if root.state == RootState.EXPIRED:
                self.alarms.record(AlarmEvent(root_id, name, self.clock))
                self._persist()
            if verify and hashlib.sha256(data).hexdigest() != name:
                raise IntegrityError(
                    f"stored bytes for {kind}/{name} do not hash to their name")
            return data

    def exists(self, root_id: str, kind: str, name: str) -> bool:
        self._check_kind(kind)
        root = self.roots.get(root_id)
        if root is None or root.state == RootState.DELETED:
            return False
        return self._obj_exists(root_id, kind, name)

    def list_names(self, root_id: str, kind: str) -> list[str]:
        self._check_kind(kind)
        self.require_root(root_id)
        return sorted(self._obj_list(root_id, kind))

    def delete_root_objects(self, root_id: str) -> None:
        with self._lock:
            self._obj_delete_all(root_id)
            self._persist()

    @staticmethod
    def _check_kind(kind: str) -> None:
        if kind not in _KINDS:
            raise ValidationError(f"unknown object kind {kind!r}")

    # -- alarms ----------------------------------------------------------
    def acknowledge_alarms(self) -> int:
        with self._lock:
            cleared = self.alarms.acknowledge()
            self._persist()
            return cleared

    # -- upload accounting ------------------------------------------------
    def record_upload(self, root_id: str, manifest_id: str,
                      total_nonzero: int, unique_count: int) -> UploadRecord:
        with self._lock:
            rec = UploadRecord(root_id, manifest_id, total_nonzero, unique_count)
            self.uploads.append(rec)
            self.tick()
            self._persist()
            return rec

    def dedup_stats(self, root_id: str | None = None) -> DedupStats:
        """Summarize upload uniqueness (per upload: new chunks / non-zero
        chunks); the eCDF covers uploads with at least one unique chunk."""
        records = [u for u in self.uploads
                   if root_id is None or u.root_id == root_id]
        if not records:
            raise ValidationError("no uploads recorded")
        fractions = tuple(u.unique_fraction for u in records)
        zero_unique = sum(1 for u in records if u.unique_count == 0) / len(records)
        nontrivial = [u.unique_fraction for u in records if u.unique_count > 0]
        return DedupStats(
            uploads=len(records),
            zero_unique_fraction=zero_unique,
            unique_fractions=fractions,
            nontrivial_mean=mean(nontrivial),
            nontrivial_median=percentile(nontrivial, 0.5) if nontrivial else 0.0,
            cdf=tuple(ecdf(nontrivial)))

    # -- persistence helpers ------------------------------------------------
    def _meta_dict(self) -> dict:
        return {
            "clock": self.clock,
            "root_seq": self._root_seq,
            "root_order": self.root_order,
            "roots": {rid: r.to_dict() for rid, r in self.roots.items()},
            "alarms": self.alarms.to_dict(),
            "uploads": [[u.root_id, u.manifest_id, u.total_nonzero,
                         u.unique_count] for u in self.uploads],
        }

    def _load_meta_dict(self, meta: dict) -> None:
        self.clock = meta["clock"]
        self._root_seq = meta["root_seq"]
        self.root_order = list(meta["root_order"])
        self.roots = {rid: Root.from_dict(d) for rid, d in meta["roots"].items()}
        self._alive_order = [rid for rid in self.root_order
                             if self.roots[rid].state != RootState.DELETED]
        self.alarms.load_dict(meta["alarms"])
        self.uploads = [UploadRecord(*row) for row in meta["uploads"]]


class MemoryStore(ChunkStore):
    """Dict-backed store for tests and the simulator."""

    def __init__(self):
        super().__init__()
        self._objects: dict[str, dict[str, dict[str, bytes]]] = {}

    def _bucket(self, root_id: str, kind: str) -> dict[str, bytes]:
        return self._objects.setdefault(root_id, {}).setdefault(kind, {})

    def _obj_write(self, root_id, kind, name, data):
        self._bucket(root_id, kind)[name] = data

    def _obj_read(self, root_id, kind, name):
        return self._bucket(root_id, kind).get(name)

    def _obj_exists(self, root_id, kind, name):
        return name in self._bucket(root_id, kind)

    def _obj_list(self, root_id, kind):
        return list(self._bucket(root_id, kind))

    def _obj_delete_all(self, root_id):
        self._objects.pop(root_id, None)

    def corrupt_object(self, root_id: str, kind: str, name: str,
                       bit_index: int) -> None:
        """Flip one bit of a stored object in place (fault injection)."""
        bucket = self._bucket(root_id, kind)
        data = bytearray(bucket[name])
        data[bit_index // 8] ^= 1 << (bit_index % 8)
        bucket[name] = bytes(data)


class DirectoryStore(ChunkStore):
    """Filesystem store: <store>/<root_id>/{chunks,manifests}/<hex-name>.

    Metadata (root states, alarms, uploads, clock) lives in meta.json next
    to the roots and is rewritten atomically on every mutation.
    """

    META_NAME = "meta.json"

    def __init__(self, base_path: str):
        super().__init__()
        self.base_path = base_path
        os.makedirs(base_path, exist_ok=True)
        meta_path = self._meta_path()
        if os.path.exists(meta_path):
            with open(meta_path, "r", encoding="utf-8") as fh:
                self._load_meta_dict(json.load(fh))

    def _meta_path(self) -> str:
        return os.path.join(self.base_path, self.META_NAME)

    def _obj_path(self, root_id: str, kind: str, name: str) -> str:
        return os.path.join(self.base_path, root_id, kind, name)

    def _obj_write(self, root_id, kind, name, data):
        path = self._obj_path(root_id, kind, name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)

    def _obj_read(self, root_id, kind, name):
        try:
            with open(self._obj_path(root_id, kind, name), "rb") as fh:
                return fh.read()
        except FileNotFoundError:
            return None

    def _obj_exists(self, root_id, kind, name):
        return os.path.exists(self._obj_path(root_id, kind, name))

    def _obj_list(self, root_id, kind):
        path = os.path.join(self.base_path, root_id, kind)
        try:
            return os.listdir(path)
        except FileNotFoundError:
            return []

    def _obj_delete_all(self, root_id):
        root_dir = os.path.join(self.base_path, root_id)
        for kind in _KINDS:
            kind_dir = os.path.join(root_dir, kind)
            if os.path.isdir(kind_dir):
                for name in os.listdir(kind_dir):
                    os.unlink(os.path.join(kind_dir, name))
                os.rmdir(kind_dir)
        if os.path.isdir(root_dir):
            os.rmdir(root_dir)

    def _persist(self):
        tmp = self._meta_path() + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self._meta_dict(), fh, sort_keys=True)
        os.replace(tmp, self._meta_path())
