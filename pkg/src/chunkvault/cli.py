"""Command-line surface: build/upload images, read benchmarks, GC drills,
simulations.

Exit codes: 0 success, 2 validation error (bad input/config/reference),
3 integrity error, 4 lifecycle refusal. Every command echoes the resolved
config hash; --json appends one machine-parseable JSON line to the human
output.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import sys
import time

import click
import yaml
from filelock import FileLock

from chunkvault import blockdev
from chunkvault.cache import (CacheNode, HashRing, LocalTransport, LRUKCache,
                              TieredFetcher)
from chunkvault.crypto import CustomerKey
from chunkvault.errors import (AuthenticationError, IntegrityError,
                               LifecycleError, NotFoundError, ValidationError)
from chunkvault.flatten import FlatImage, apply_layers, chunk_image, serialize_image
from chunkvault.ingest import make_salt, upload_image
from chunkvault.manifest import open_manifest
from chunkvault.rootgc import GcConfig, GcEngine, LivenessView
from chunkvault.store import KIND_CHUNK, DirectoryStore
from chunkvault.sim import (cold_start_drill, load_config, run_sim,
                            scan_resistance_experiment)
from chunkvault.tario import load_layer_tar

EXIT_VALIDATION = 2
EXIT_INTEGRITY = 3
EXIT_LIFECYCLE = 4

_CONFIG_DEFAULTS = {
    "store": "./store",
    "chunk_size": 512 * 1024,
    "salt": {"mode": "per-root", "static": ""},
    "customer_key_id": "default",
    "erasure_k": 4,
    "l1_bytes": 256 * 1024 * 1024,
    "l2_nodes": 0,
    "l2_node_bytes": 256 * 1024 * 1024,
    "lru_k": 2,
    "keyfile": "keys.yaml",
    "quiet_period": 64,
}


class Settings:
    def __init__(self, data: dict, base_dir: str):
        self.data = data
        self.base_dir = base_dir

    @staticmethod
    def load(config_path: str | None, store_override: str | None) -> "Settings":
        data = dict(_CONFIG_DEFAULTS)
        base_dir = os.getcwd()
        if config_path:
            with open(config_path, "r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh) or {}
            unknown = set(loaded) - set(_CONFIG_DEFAULTS)
            if unknown:
                raise ValidationError(f"config: unknown field(s) {sorted(unknown)}")
            salt = dict(_CONFIG_DEFAULTS["salt"])
            salt.update(loaded.pop("salt", {}) or {})
            data.update(loaded)
            data["salt"] = salt
            base_dir = os.path.dirname(os.path.abspath(config_path))
        if store_override:
            data["store"] = store_override
        if data["salt"]["mode"] not in ("per-root", "static"):
            raise ValidationError("config: salt.mode must be per-root or static")
        if data["chunk_size"] <= 0 or data["chunk_size"] % 4096:
            raise ValidationError("config: chunk_size must be a positive "
                                  "multiple of 4096")
        return Settings(data, base_dir)

    def _resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    @property
    def store_path(self) -> str:
        return self._resolve(str(self.data["store"]))

    @property
    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.data, sort_keys=True).encode()).hexdigest()[:12]

    def open_store(self) -> DirectoryStore:
        return DirectoryStore(self.store_path)

    def engine(self, store, dead: tuple[str, ...] = ()) -> GcEngine:
        dead_path = os.path.join(self.store_path, "dead_manifests.json")
        persisted: list[str] = []
        if os.path.exists(dead_path):
            with open(dead_path, "r", encoding="utf-8") as fh:
                persisted = json.load(fh)
        merged = sorted(set(persisted) | set(dead))
        if set(merged) != set(persisted):
            with open(dead_path, "w", encoding="utf-8") as fh:
                json.dump(merged, fh)
        return GcEngine(store, GcConfig(quiet_period=int(self.data["quiet_period"])),
                        LivenessView(dead=merged))

    def salt_for(self, root_id: str):
        static = bytes.fromhex(self.data["salt"]["static"]) \
            if self.data["salt"]["static"] else b""
        if self.data["salt"]["mode"] == "per-root":
            return make_salt(static, root_id)
        return make_salt(static, None)

    def customer_key(self, key_id: str | None) -> CustomerKey:
        key_id = key_id or str(self.data["customer_key_id"])
        keyfile = self._resolve(str(self.data["keyfile"]))
        keys: dict[str, str] = {}
        if os.path.exists(keyfile):
            with open(keyfile, "r", encoding="utf-8") as fh:
                keys = yaml.safe_load(fh) or {}
        if key_id not in keys:
            # local test fixture, not a KMS: generate and persist on demand
            keys[key_id] = os.urandom(32).hex()
            os.makedirs(os.path.dirname(keyfile) or ".", exist_ok=True)
            with open(keyfile, "w", encoding="utf-8") as fh:
                yaml.safe_dump(keys, fh)
            click.echo(f"generated new customer key {key_id!r} in {keyfile}")
        raw = bytes.fromhex(keys[key_id])
        if len(raw) != 32:
            raise ValidationError(f"keyfile entry {key_id!r} is not 32 bytes")
        return CustomerKey(key_id, raw)


def _emit(as_json: bool, lines: list[str], payload: dict) -> None:
    for line in lines:
        click.echo(line)
    if as_json:
        click.echo(json.dumps(payload, sort_keys=True))


def _run(fn):
    try:
        fn()
    except (ValidationError, NotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    except (IntegrityError, AuthenticationError) as exc:
        click.echo(f"integrity error: {exc}", err=True)
        sys.exit(EXIT_INTEGRITY)
    except LifecycleError as exc:
        click.echo(f"refused: {exc}", err=True)
        sys.exit(EXIT_LIFECYCLE)


@click.group()
@click.option("--store", type=click.Path(), default=None,
              help="Store directory (overrides config).")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="Store config YAML.")
@click.option("--json", "as_json", is_flag=True,
              help="Append a machine-parseable JSON result line.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed for synthetic traces and simulations.")
@click.pass_context
def main(ctx, store, config_path, as_json, seed):
    """Deduplicating chunk store with tiered caching: build, upload, read,
    collect garbage, simulate."""
    ctx.ensure_object(dict)
    ctx.obj["as_json"] = as_json
    ctx.obj["seed"] = seed
    try:
        ctx.obj["settings"] = Settings.load(config_path, store)
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)


@main.command()
@click.argument("layer_tars", nargs=-1, type=click.Path(exists=True))
@click.option("--out", "-o", required=True, type=click.Path(),
              help="Output flat image file.")
@click.pass_context
def flatten(ctx, layer_tars, out):
    """Apply ordered layer tarballs and write the canonical flat image."""
    settings = ctx.obj["settings"]

    def go():
        layers = [load_layer_tar(path, i) for i, path in enumerate(layer_tars)]
        image = serialize_image(apply_layers(layers))
        image.write_to(out)
        chunks = chunk_image(image, int(settings.data["chunk_size"]))
        digest = hashlib.sha256(image.data).hexdigest()
        zero = sum(1 for c in chunks.chunks if c.is_zero)
        _emit(ctx.obj["as_json"], [
            f"config {settings.digest}",
            f"flattened {len(layer_tars)} layer(s) -> {out}",
            f"image length {len(image.data)} bytes, sha256 {digest}",
            f"chunks {len(chunks.chunks)} ({zero} all-zero elided)",
        ], {"config": settings.digest, "out": out,
            "image_length": len(image.data), "image_sha256": digest,
            "chunks": len(chunks.chunks), "zero_chunks": zero})

    _run(go)


@main.command()
@click.argument("image_path", type=click.Path(exists=True))
@click.option("--key-id", default=None, help="Customer key id (keyfile entry).")
@click.pass_context
def upload(ctx, image_path, key_id):
    """Encrypt, deduplicate, and store a flat image; seal its manifest."""
    settings = ctx.obj["settings"]

    def go():
        image = FlatImage.read_from(image_path)
        store = settings.open_store()
        engine = settings.engine(store)
        root = engine.active_root_for(image.data[:4096])
        customer = settings.customer_key(key_id)
        result = upload_image(store, root.root_id, image,
                              chunk_size=int(settings.data["chunk_size"]),
                              salt=settings.salt_for(root.root_id),
                              customer=customer)
        _emit(ctx.obj["as_json"], [
            f"config {settings.digest}",
            f"uploaded to root {root.root_id} as manifest {result.manifest_id}",
            f"chunks {result.total_chunks} total, {result.zero_chunks} zero, "
            f"{result.nonzero_chunks} stored-class",
            f"unique chunks {result.unique_chunks} "
            f"({result.unique_fraction:.1%} of non-zero)",
        ], {"config": settings.digest, "root": root.root_id,
            "manifest_id": result.manifest_id,
            "total_chunks": result.total_chunks,
            "zero_chunks": result.zero_chunks,
            "unique_chunks": result.unique_chunks,
            "unique_fraction": result.unique_fraction})

    _run(go)


def _parse_trace(path: str) -> list[tuple[str, int, bytes | int]]:
    ops: list[tuple[str, int, bytes | int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "R":
                    ops.append(("R", int(parts[1]), int(parts[2])))
                elif parts[0] == "W":
                    ops.append(("W", int(parts[1]), bytes.fromhex(parts[2])))
                else:
                    raise ValueError(f"unknown op {parts[0]!r}")
            except (IndexError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad trace line: {exc}")
    return ops


def _synthetic_trace(image_length: int, fraction: float, seed: int):
    pages = max(1, image_length // blockdev.PAGE_SIZE)
    count = max(1, int(pages * fraction))
    rng = random.Random(seed)
    chosen = sorted(rng.sample(range(pages), min(count, pages)))
    return [("R", p * blockdev.PAGE_SIZE,
             min(blockdev.PAGE_SIZE, image_length - p * blockdev.PAGE_SIZE))
            for p in chosen]


@main.command("read-bench")
@click.argument("manifest_id")
@click.option("--key-id", default=None, help="Customer key id.")
@click.option("--trace", "trace_path", type=click.Path(exists=True),
              default=None, help="Trace file (R offset length | W offset hex).")
@click.option("--touch-fraction", default=0.064, show_default=True,
              help="Synthetic trace: fraction of pages to read once.")
@click.pass_context
def read_bench(ctx, manifest_id, key_id, trace_path, touch_fraction):
    """Replay an access trace against a COW device over a manifest."""
    settings = ctx.obj["settings"]

    def go():
        store = settings.open_store()
        engine = settings.engine(store)
        root_id, manifest_bytes = engine.locate_manifest(manifest_id)
        customer = settings.customer_key(key_id)
        opened = open_manifest(manifest_bytes, customer)

        l1 = LRUKCache(int(settings.data["l1_bytes"]),
                       k=int(settings.data["lru_k"]))
        n_nodes = int(settings.data["l2_nodes"])
        if n_nodes > 0:
            nodes = {f"n{i:02d}": CacheNode(f"n{i:02d}",
                                            int(settings.data["l2_node_bytes"]),
                                            k=int(settings.data["lru_k"]))
                     for i in range(n_nodes)}
            ring, transport = HashRing(list(nodes)), LocalTransport(nodes)
        else:
            ring = transport = None
        fetcher = TieredFetcher(
            l1, ring, transport,
            lambda name: engine.read_chunk(name, preferred_root_id=root_id),
            k=int(settings.data["erasure_k"]))
        device = blockdev.DeviceView(opened, fetcher)

        ops = (_parse_trace(trace_path) if trace_path
               else _synthetic_trace(opened.image_length, touch_fraction,
                                     ctx.obj["seed"]))
        latencies = []
        for op, offset, arg in ops:
            t0 = time.perf_counter()
            if op == "R":
                device.read(offset, arg)
            else:
                device.write(offset, arg)
            latencies.append(time.perf_counter() - t0)
        stats = fetcher.stats
        total_s = sum(latencies)
        lines = [
            f"config {settings.digest}",
            f"manifest {manifest_id} served from root {root_id}",
            f"replayed {len(ops)} ops in {total_s * 1e3:.2f} ms "
            f"(mean {total_s / len(ops) * 1e6:.1f} us)" if ops else "empty trace",
            f"tiers: L1 {stats.l1_hits}, L2 {stats.l2_hits}, "
            f"origin {stats.origin_fetches}",
            f"chunks fetched {len(device.chunks_requested)} of "
            f"{len(opened.records)}",
        ]
        _emit(ctx.obj["as_json"], lines, {
            "config": settings.digest, "manifest_id": manifest_id,
            "root": root_id, "ops": len(ops),
            "mean_latency_us": (total_s / len(ops) * 1e6) if ops else 0.0,
            "l1_hits": stats.l1_hits, "l2_hits": stats.l2_hits,
            "origin_fetches": stats.origin_fetches,
            "chunks_fetched": len(device.chunks_requested),
            "total_chunks": len(opened.records)})

    _run(go)


@main.command()
@click.argument("verb", type=click.Choice(
    ["rotate", "migrate", "expire", "delete", "ack-alarms", "status"]))
@click.option("--root", "root_id", default=None, help="Target root id.")
@click.option("--manifest", "manifest_id", default=None,
              help="Migrate one manifest instead of sweeping.")
@click.option("--mark-dead", "dead", multiple=True,
              help="Manifest ids no longer referenced (repeatable).")
@click.pass_context
def gc(ctx, verb, root_id, manifest_id, dead):
    """Garbage-collection lifecycle verbs over the store's roots."""
    settings = ctx.obj["settings"]

    def go():
        os.makedirs(settings.store_path, exist_ok=True)
        with FileLock(os.path.join(settings.store_path, "gc.lock")):
            store = settings.open_store()
            engine = settings.engine(store, dead)
            payload: dict = {"config": settings.digest, "verb": verb}
            lines = [f"config {settings.digest}"]
            if verb == "rotate":
                engine.ensure_active()
                new_root = engine.rotate()
                lines.append(f"rotated: new active root {new_root.root_id}")
                payload["active_root"] = new_root.root_id
            elif verb == "migrate":
                if manifest_id:
                    if not root_id:
                        raise ValidationError("--manifest requires --root "
                                              "(the retired source root)")
                    target = engine.migrate_manifest(manifest_id, root_id)
                    lines.append(f"migrated {manifest_id} from {root_id} "
                                 f"to {target}")
                    payload["migrated"] = [[manifest_id, root_id]]
                else:
                    moved = engine.sweep()
                    lines.append(f"sweep migrated {len(moved)} manifest(s)")
                    payload["migrated"] = [list(m) for m in moved]
            elif verb == "expire":
                if not root_id:
                    raise ValidationError("expire requires --root")
                engine.expire_root(root_id)
                lines.append(f"root {root_id} expired")
                payload["root"] = root_id
            elif verb == "delete":
                if not root_id:
                    raise ValidationError("delete requires --root")
                engine.delete_root(root_id)
                lines.append(f"root {root_id} deleted")
                payload["root"] = root_id
            elif verb == "ack-alarms":
                cleared = store.acknowledge_alarms()
                lines.append(f"acknowledged {cleared} alarm event(s)")
                payload["cleared"] = cleared
            else:  # status
                status = engine.status()
                for r in status["roots"]:
                    flags = " migration-complete" if r["migration_complete"] else ""
                    lines.append(
                        f"root {r['root_id']}: {r['state']}{flags}, "
                        f"{r['manifests']} manifest(s), {r['chunks']} chunk(s)")
                lines.append(
                    f"alarms: {status['alarms']['events']} event(s), "
                    f"deletions_blocked={status['alarms']['deletions_blocked']}")
                payload["status"] = status
            _emit(ctx.obj["as_json"], lines, payload)

    _run(go)


@main.command()
@click.option("--mode", type=click.Choice(["run", "cold-start",
                                           "scan-resistance"]),
              default="run", show_default=True)
@click.option("--config", "sim_config_path", required=True,
              type=click.Path(exists=True), help="Simulation config YAML.")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Report output directory.")
@click.option("--flush-at", type=float, default=None,
              help="cold-start mode: virtual time of the cache flush "
                   "(default: mid-run).")
@click.pass_context
def simulate(ctx, mode, sim_config_path, out_dir, flush_at):
    """Run a seeded simulation and write JSON + CSV eCDF reports."""
    settings = ctx.obj["settings"]

    def go():
        import dataclasses
        config = load_config(sim_config_path)
        if ctx.obj["seed"]:
            config = dataclasses.replace(config, seed=ctx.obj["seed"])
        lines = [f"config {settings.digest} sim {config.digest()} "
                 f"seed {config.seed}"]
        payload: dict = {"config": settings.digest, "sim": config.digest(),
                         "seed": config.seed, "mode": mode}
        if mode == "run":
            report = run_sim(config)
            paths = report.write(out_dir, prefix="run")
            lines.append(
                f"starts {report.total_starts} (rejected "
                f"{report.rejected_starts}), tiers {report.tier_totals}")
            payload["files"] = paths
            payload["tier_totals"] = report.tier_totals
        elif mode == "cold-start":
            at = flush_at if flush_at is not None else config.workload.duration / 2
            drill = cold_start_drill(config, flush_at=at)
            paths = drill.report.write(out_dir, prefix="cold_start")
            lines.append(
                f"flush at {at}s: pre-flush L2 hit rate "
                f"{drill.pre_flush_l2_hit_rate:.3f}, recovered="
                f"{drill.recovered} after "
                f"{drill.recovery_buckets_after_flush} bucket(s), "
                f"post-flush max in-flight {drill.post_flush_max_in_flight}, "
                f"rejected {drill.rejected_after_flush}")
            payload.update({
                "files": paths, "flush_at": at,
                "pre_flush_l2_hit_rate": drill.pre_flush_l2_hit_rate,
                "recovered": drill.recovered,
                "recovery_buckets": drill.recovery_buckets_after_flush,
                "post_flush_max_in_flight": drill.post_flush_max_in_flight,
                "rejected_after_flush": drill.rejected_after_flush})
        else:
            scan = scan_resistance_experiment(config)
            paths = scan.report_lru1.write(out_dir, prefix="scan_lru1")
            paths += scan.report_lru2.write(out_dir, prefix="scan_lru2")
            series_path = os.path.join(out_dir, "scan_hot_hit_rate.csv")
            with open(series_path, "w", encoding="utf-8") as fh:
                fh.write("t0,lru1_hot_hit_rate,lru2_hot_hit_rate\n")
                for (t0, r1), (_, r2) in zip(scan.series_lru1, scan.series_lru2):
                    fh.write(f"{t0},{'' if r1 is None else r1},"
                             f"{'' if r2 is None else r2}\n")
            paths.append(series_path)
            lines.append(
                f"hot-set dip: LRU-1 {scan.dip_lru1:.3f} vs LRU-2 "
                f"{scan.dip_lru2:.3f}; hot evictions "
                f"{scan.hot_evictions_lru1} vs {scan.hot_evictions_lru2}")
            payload.update({
                "files": paths, "dip_lru1": scan.dip_lru1,
                "dip_lru2": scan.dip_lru2,
                "hot_evictions_lru1": scan.hot_evictions_lru1,
                "hot_evictions_lru2": scan.hot_evictions_lru2})
        _emit(ctx.obj["as_json"], lines, payload)

    _run(go)


if __name__ == "__main__":
    main()
