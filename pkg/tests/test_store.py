"""Origin store: put-if-absent, lifecycle gating, alarms, dedup stats."""

import hashlib

import pytest

from chunkvault.errors import (IntegrityError, LifecycleError, NotFoundError,
                               ValidationError)
from chunkvault.store import (KIND_CHUNK, KIND_MANIFEST, DirectoryStore,
                              MemoryStore, PutResult, RootState)


@pytest.fixture(params=["memory", "directory"])
def store(request, tmp_path):
    if request.param == "memory":
        return MemoryStore()
    return DirectoryStore(str(tmp_path / "store"))


def named(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def test_put_twice_idempotent(store):
    root = store.create_root()
    data = b"chunk bytes"
    name = named(data)
    assert store.put_if_absent(root.root_id, KIND_CHUNK, name, data) is PutResult.STORED
    assert store.put_if_absent(root.root_id, KIND_CHUNK, name, data) is PutResult.ALREADY_PRESENT
    assert store.get(root.root_id, KIND_CHUNK, name) == data


def test_existing_bytes_never_replaced(store):
    root = store.create_root()
    store.put_if_absent(root.root_id, KIND_CHUNK, "n1", b"original")
    with pytest.raises(IntegrityError):
        store.put_if_absent(root.root_id, KIND_CHUNK, "n1", b"different")
    assert store.get(root.root_id, KIND_CHUNK, "n1") == b"original"


def test_put_to_expired_rejected(store):
    root = store.create_root()
    store.set_root_state(root.root_id, RootState.RETIRED)
    store.set_migration_complete(root.root_id)
    store.set_root_state(root.root_id, RootState.EXPIRED)
    with pytest.raises(LifecycleError):
        store.put_if_absent(root.root_id, KIND_CHUNK, "n", b"d")


def test_put_to_retired_requires_migration_flag(store):
    root = store.create_root()
    store.set_root_state(root.root_id, RootState.RETIRED)
    with pytest.raises(LifecycleError):
        store.put_if_absent(root.root_id, KIND_CHUNK, "n", b"d")
    assert store.put_if_absent(root.root_id, KIND_CHUNK, "n", b"d",
                               migration=True) is PutResult.STORED


def test_get_from_active_no_alarm(store):
    root = store.create_root()
    store.put_if_absent(root.root_id, KIND_CHUNK, "n", b"d")
    assert store.get(root.root_id, KIND_CHUNK, "n") == b"d"
    assert not store.alarms.deletions_blocked
    assert store.alarms.events == []


def test_get_from_expired_raises_alarm_and_blocks_deletes(store):
    root = store.create_root()
    store.put_if_absent(root.root_id, KIND_CHUNK, "n", b"d")
    store.set_root_state(root.root_id, RootState.RETIRED)
    store.set_migration_complete(root.root_id)
    store.set_root_state(root.root_id, RootState.EXPIRED)
    assert store.get(root.root_id, KIND_CHUNK, "n") == b"d"  # read still served
    assert store.alarms.deletions_blocked
    assert store.alarms.events[0].root_id == root.root_id
    assert store.alarms.events[0].name == "n"
    cleared = store.acknowledge_alarms()
    assert cleared == 1
    assert not store.alarms.deletions_blocked


def test_get_unknown_name_not_found(store):
    root = store.create_root()
    with pytest.raises(NotFoundError):
        store.get(root.root_id, KIND_CHUNK, "missing")


def test_get_from_deleted_root_not_found(store):
    root = store.create_root()
    store.put_if_absent(root.root_id, KIND_CHUNK, "n", b"d")
    store.set_root_state(root.root_id, RootState.RETIRED)
    store.set_migration_complete(root.root_id)
    store.set_root_state(root.root_id, RootState.EXPIRED)
    store.delete_root_objects(root.root_id)
    store.set_root_state(root.root_id, RootState.DELETED)
    with pytest.raises(NotFoundError):
        store.get(root.root_id, KIND_CHUNK, "n")


def test_lifecycle_transitions_enforced(store):
    root = store.create_root()
    with pytest.raises(LifecycleError):
        store.set_root_state(root.root_id, RootState.EXPIRED)
    with pytest.raises(LifecycleError):
        store.set_root_state(root.root_id, RootState.DELETED)
    store.set_root_state(root.root_id, RootState.RETIRED)
    with pytest.raises(LifecycleError):  # expiry gated on migration_complete
        store.set_root_state(root.root_id, RootState.EXPIRED)
    store.set_migration_complete(root.root_id)
    store.set_root_state(root.root_id, RootState.EXPIRED)
    store.set_root_state(root.root_id, RootState.DELETED)
    with pytest.raises(LifecycleError):
        store.set_root_state(root.root_id, RootState.ACTIVE)


def test_migration_complete_only_in_retired(store):
    root = store.create_root()
    with pytest.raises(LifecycleError):
        store.set_migration_complete(root.root_id)


def test_content_addressing_verify_mode(store):
    root = store.create_root()
    data = b"verified bytes"
    store.put_if_absent(root.root_id, KIND_CHUNK, named(data), data)
    assert store.get(root.root_id, KIND_CHUNK, named(data), verify=True) == data
    store.put_if_absent(root.root_id, KIND_CHUNK, "not-the-hash", data)
    with pytest.raises(IntegrityError):
        store.get(root.root_id, KIND_CHUNK, "not-the-hash", verify=True)


def test_unknown_kind_rejected(store):
    root = store.create_root()
    with pytest.raises(ValidationError):
        store.put_if_absent(root.root_id, "blobs", "n", b"d")


def test_list_names_sorted(store):
    root = store.create_root()
    for name in ("bb", "aa", "cc"):
        store.put_if_absent(root.root_id, KIND_CHUNK, name, name.encode())
    assert store.list_names(root.root_id, KIND_CHUNK) == ["aa", "bb", "cc"]
    assert store.list_names(root.root_id, KIND_MANIFEST) == []


def test_shared_prefix_stored_once(store):
    # two uploads sharing chunk names: object count < sum of chunk counts
    root = store.create_root()
    shared = [(f"s{i}", bytes([i]) * 8) for i in range(10)]
    unique = [("u1", b"one"), ("u2", b"two")]
    for name, data in shared + unique[:1]:
        store.put_if_absent(root.root_id, KIND_CHUNK, name, data)
    for name, data in shared + unique[1:]:
        store.put_if_absent(root.root_id, KIND_CHUNK, name, data)
    assert len(store.list_names(root.root_id, KIND_CHUNK)) == 12 < 2 * 11


def test_dedup_stats(store):
    root = store.create_root()
    store.record_upload(root.root_id, "m1", total_nonzero=100, unique_count=100)
    store.record_upload(root.root_id, "m2", total_nonzero=100, unique_count=0)
    store.record_upload(root.root_id, "m3", total_nonzero=100, unique_count=5)
    stats = store.dedup_stats(root.root_id)
    assert stats.uploads == 3
    assert stats.zero_unique_fraction == pytest.approx(1 / 3)
    assert stats.unique_fractions == (1.0, 0.0, 0.05)
    assert stats.nontrivial_mean == pytest.approx((1.0 + 0.05) / 2)
    assert stats.cdf == ((0.05, 0.5), (1.0, 1.0))


def test_dedup_stats_requires_uploads(store):
    store.create_root()
    with pytest.raises(ValidationError):
        store.dedup_stats()


def test_directory_store_layout_and_reload(tmp_path):
    base = str(tmp_path / "store")
    store = DirectoryStore(base)
    root = store.create_root()
    data = b"layout check"
    name = named(data)
    store.put_if_absent(root.root_id, KIND_CHUNK, name, data)
    store.put_if_absent(root.root_id, KIND_MANIFEST, "m" * 8, b"manifest")
    obj_path = tmp_path / "store" / root.root_id / "chunks" / name
    assert obj_path.is_file()
    assert obj_path.read_bytes() == data

    # state survives a reload from disk
    store.set_root_state(root.root_id, RootState.RETIRED)
    reloaded = DirectoryStore(base)
    assert reloaded.clock == store.clock
    assert reloaded.roots[root.root_id].state is RootState.RETIRED
    assert reloaded.get(root.root_id, KIND_CHUNK, name) == data


def test_logical_clock_monotonic(store):
    before = store.clock
    root = store.create_root()
    store.put_if_absent(root.root_id, KIND_CHUNK, "n", b"d")
    store.get(root.root_id, KIND_CHUNK, "n")
    assert store.clock > before
    assert root.created_at > before
