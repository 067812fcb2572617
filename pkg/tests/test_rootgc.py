"""Root GC: rotation, migration (with crash injection), expiry, deletion."""

import pytest

from chunkvault.crypto import CustomerKey
from chunkvault.errors import IntegrityError, LifecycleError, NotFoundError
from chunkvault.flatten import chunk_image
from chunkvault.ingest import make_salt, upload_image
from chunkvault.manifest import list_chunk_names
from chunkvault.rootgc import GcConfig, GcEngine, LivenessView
from chunkvault.store import KIND_CHUNK, KIND_MANIFEST, MemoryStore, RootState

CUSTOMER = CustomerKey("t1", b"\x01" * 32)
CHUNK = 4096


def fixed_rng(n):
    return b"\x11" * n


def make_engine(quiet=0, liveness=None):
    store = MemoryStore()
    engine = GcEngine(store, GcConfig(quiet_period=quiet), liveness)
    return store, engine


def image_bytes(seed: int, pages: int = 4) -> bytes:
    return b"".join(bytes([seed + i]) * CHUNK for i in range(pages))


def do_upload(store, engine, seed, pages=4):
    root = engine.ensure_active()
    salt = make_salt(b"test", root.root_id)
    return root, upload_image(store, root.root_id, image_bytes(seed, pages),
                              chunk_size=CHUNK, salt=salt, customer=CUSTOMER,
                              rng=fixed_rng)


def test_rotate_retires_old_activates_new():
    store, engine = make_engine()
    old = engine.ensure_active()
    _, res = do_upload(store, engine, 1)
    new = engine.rotate()
    assert store.roots[old.root_id].state is RootState.RETIRED
    assert store.roots[new.root_id].state is RootState.ACTIVE
    assert engine.ensure_active().root_id == new.root_id


def test_rotate_empty_root_immediately_migration_complete():
    store, engine = make_engine()
    old = engine.ensure_active()
    engine.rotate()
    assert store.roots[old.root_id].migration_complete


def test_post_rotation_chunks_never_dedup_against_old_root():
    store, engine = make_engine()
    root1, res1 = do_upload(store, engine, 1)
    engine.rotate()
    root2, res2 = do_upload(store, engine, 1)  # same image bytes
    assert root2.root_id != root1.root_id
    names1 = set(list_chunk_names(res1.manifest))
    names2 = set(list_chunk_names(res2.manifest))
    assert names1.isdisjoint(names2)
    assert res2.unique_chunks == res2.nonzero_chunks  # 100% unique again


def test_migrate_then_read_entirely_from_target():
    store, engine = make_engine()
    root1, res = do_upload(store, engine, 3)
    root2 = engine.rotate()
    engine.migrate_manifest(res.manifest_id, root1.root_id)
    data = store.get(root2.root_id, KIND_MANIFEST, res.manifest_id)
    for name in list_chunk_names(data):
        assert store.get(root2.root_id, KIND_CHUNK, name)
    assert engine.closure_violations(root2.root_id) == []


def test_migrate_copies_chunks_before_manifest_crash_then_retry():
    store, engine = make_engine()
    root1, res = do_upload(store, engine, 5, pages=6)
    root2 = engine.rotate()

    class Boom(Exception):
        pass

    def crash_after(n):
        def cb(copied):
            if copied == n:
                raise Boom()
        return cb

    with pytest.raises(Boom):
        engine.migrate_manifest(res.manifest_id, root1.root_id,
                                progress=crash_after(2))
    # crashed mid-copy: manifest not yet in target, still served from source
    assert not store.exists(root2.root_id, KIND_MANIFEST, res.manifest_id)
    assert store.exists(root1.root_id, KIND_MANIFEST, res.manifest_id)

    engine.migrate_manifest(res.manifest_id, root1.root_id)  # idempotent retry
    assert store.exists(root2.root_id, KIND_MANIFEST, res.manifest_id)
    assert engine.closure_violations(root2.root_id) == []


def test_migrate_shared_chunks_copied_once():
    store, engine = make_engine()
    root1, res_a = do_upload(store, engine, 7)
    _, res_b = do_upload(store, engine, 7)  # identical image, same chunks
    root2 = engine.rotate()
    engine.migrate_manifest(res_a.manifest_id, root1.root_id)
    count_after_first = len(store.list_names(root2.root_id, KIND_CHUNK))
    engine.migrate_manifest(res_b.manifest_id, root1.root_id)
    assert len(store.list_names(root2.root_id, KIND_CHUNK)) == count_after_first


def test_migrate_missing_chunk_aborts_with_integrity_error():
    store, engine = make_engine()
    root1, res = do_upload(store, engine, 9)
    engine.rotate()
    victim = list_chunk_names(res.manifest)[1]
    del store._objects[root1.root_id][KIND_CHUNK][victim]
    with pytest.raises(IntegrityError, match=victim):
        engine.migrate_manifest(res.manifest_id, root1.root_id)
    target = engine.ensure_active()
    assert not store.exists(target.root_id, KIND_MANIFEST, res.manifest_id)


def test_migrate_requires_retired_source():
    store, engine = make_engine()
    root, res = do_upload(store, engine, 2)
    with pytest.raises(LifecycleError):
        engine.migrate_manifest(res.manifest_id, root.root_id)


def test_expire_checks_migration():
    store, engine = make_engine()
    root1, res = do_upload(store, engine, 4)
    engine.rotate()
    with pytest.raises(LifecycleError, match=res.manifest_id):
        engine.expire_root(root1.root_id)
    engine.migrate_manifest(res.manifest_id, root1.root_id)
    assert engine.expire_root(root1.root_id).state is RootState.EXPIRED


def test_expire_skips_dead_manifests():
    liveness = LivenessView()
    store, engine = make_engine(liveness=liveness)
    root1, res = do_upload(store, engine, 4)
    liveness.mark_dead(res.manifest_id)
    engine.rotate()
    assert engine.expire_root(root1.root_id).state is RootState.EXPIRED


def test_read_after_expire_alarms_and_blocks_delete():
    store, engine = make_engine(quiet=0)
    root1, res = do_upload(store, engine, 6)
    engine.rotate()
    engine.sweep()
    engine.expire_root(root1.root_id)
    name = list_chunk_names(res.manifest)[0]
    store.get(root1.root_id, KIND_CHUNK, name)  # read allowed, alarmed
    assert store.alarms.deletions_blocked
    with pytest.raises(LifecycleError, match="blocked"):
        engine.delete_root(root1.root_id)
    store.acknowledge_alarms()
    assert engine.delete_root(root1.root_id).state is RootState.DELETED
    assert store.list_names(root1.root_id, KIND_CHUNK) == []


def test_delete_requires_expired_state():
    store, engine = make_engine()
    root = engine.ensure_active()
    with pytest.raises(LifecycleError):
        engine.delete_root(root.root_id)


def test_delete_waits_for_quiet_period():
    store, engine = make_engine(quiet=50)
    root1, _ = do_upload(store, engine, 8)
    engine.rotate()
    engine.sweep()
    engine.expire_root(root1.root_id)
    with pytest.raises(LifecycleError, match="quiet"):
        engine.delete_root(root1.root_id)
    for _ in range(50):
        store.tick()
    assert engine.delete_root(root1.root_id).state is RootState.DELETED


def test_sweep_migrates_all_live_and_marks_complete():
    store, engine = make_engine()
    root1, res_a = do_upload(store, engine, 1)
    _, res_b = do_upload(store, engine, 2)
    engine.rotate()
    migrated = engine.sweep()
    assert {m for m, _ in migrated} == {res_a.manifest_id, res_b.manifest_id}
    assert store.roots[root1.root_id].migration_complete
    assert engine.sweep() == []  # idempotent


def test_locate_manifest_triggers_on_access_migration():
    store, engine = make_engine()
    root1, res = do_upload(store, engine, 3)
    root2 = engine.rotate()
    found_root, data = engine.locate_manifest(res.manifest_id)
    assert found_root == root1.root_id  # served from where it was found
    assert store.exists(root2.root_id, KIND_MANIFEST, res.manifest_id)
    assert engine.closure_violations(root2.root_id) == []
    # second lookup now finds the migrated copy first
    found_root2, _ = engine.locate_manifest(res.manifest_id)
    assert found_root2 == root2.root_id


def test_locate_manifest_not_found():
    store, engine = make_engine()
    engine.ensure_active()
    with pytest.raises(NotFoundError):
        engine.locate_manifest("nope")


def test_multi_active_assignment():
    store = MemoryStore()
    engine = GcEngine(store, GcConfig(active_roots=2))
    engine.ensure_active()
    engine.rotate()  # two actives now, nothing retired yet
    actives = store.active_roots()
    assert len(actives) == 2
    picks = {engine.active_root_for(bytes([i])).root_id for i in range(32)}
    assert picks == {r.root_id for r in actives}  # both get assignments
    # rotation beyond the cap retires the oldest
    engine.rotate()
    assert len(store.active_roots()) == 2
    assert store.roots[actives[0].root_id].state is RootState.RETIRED


def test_status_reports_roots_and_alarms():
    store, engine = make_engine()
    do_upload(store, engine, 1)
    engine.rotate()
    status = engine.status()
    assert [r["state"] for r in status["roots"]] == ["retired", "active"]
    assert status["alarms"]["deletions_blocked"] is False
