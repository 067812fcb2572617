"""Seeded discrete-event simulator over the real storage/cache stack.

Virtual time only: a heap of (time, seq, action) events drives container
starts through manifest open and per-chunk fetches against real L1/L2
caches, the real erasure path, and a real in-memory origin store. All
randomness comes from named, seed-derived streams, so a (config, seed)
pair reproduces byte-identical reports.

Chunk payloads are real (tiny) encrypted chunks; fetches run in
verify-only mode (hash checks on, decryption skipped) since nothing
consumes plaintext here and CTR decryption cannot alter control flow.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import random
from array import array
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from chunkvault.cache.fetch import TIER_L1, TIER_L2, TieredFetcher
from chunkvault.cache.lruk import LRUKCache
from chunkvault.cache.node import CacheNode
from chunkvault.cache.ring import HashRing
from chunkvault.crypto import CustomerKey, Salt, derive_key, encrypt_chunk
from chunkvault.erasure import encode
from chunkvault.errors import NotFoundError
from chunkvault.flatten import PlainChunk
from chunkvault.ingest import ingest_chunks
from chunkvault.manifest import open_manifest
from chunkvault.sim.config import SimConfig, TierLatency
from chunkvault.store import KIND_CHUNK, MemoryStore

_SIM_CUSTOMER = CustomerKey("sim", b"\x5c" * 32)
_BATCH = 8192


def _stream_seed(seed: int, name: str) -> np.random.SeedSequence:
    digest = hashlib.sha256(f"{seed}|{name}".encode()).digest()
    return np.random.SeedSequence([seed, int.from_bytes(digest[:8], "little")])


class _Stream:
    __slots__ = ("gen", "batch", "idx")

    def __init__(self, seed_seq: np.random.SeedSequence):
        self.gen = np.random.Generator(np.random.PCG64(seed_seq))
        self.batch = self.gen.standard_normal(_BATCH)
        self.idx = 0

    def next(self) -> float:
        if self.idx >= _BATCH:
            self.batch = self.gen.standard_normal(_BATCH)
            self.idx = 0
        value = self.batch[self.idx]
        self.idx += 1
        return float(value)


class LatencySampler:
    """Batched lognormal sampling; one independent stream per name."""

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[str, _Stream] = {}

    def normal(self, stream: str) -> float:
        s = self._streams.get(stream)
        if s is None:
            s = self._streams[stream] = _Stream(_stream_seed(self.seed, stream))
        return s.next()

    def lognormal(self, spec: TierLatency, stream: str) -> float:
        if spec.median <= 0:
            return 0.0
        if spec.sigma == 0:
            return spec.median
        return spec.median * math.exp(spec.sigma * self.normal(stream))


class SimTransport:
    """Virtual-latency stripe transport over in-process cache nodes."""

    def __init__(self, nodes: dict[str, CacheNode], sampler: LatencySampler,
                 l2_spec: TierLatency, failure_detect: float,
                 slow_factors: dict[str, float], down: dict[str, list],
                 clock: "Engine"):
        self.nodes = nodes
        self.sampler = sampler
        self.l2_spec = l2_spec
        self.failure_detect = failure_detect
        self.slow_factors = slow_factors
        self.down = down
        self.clock = clock
        self.contacted: set[str] = set()
        self.requests = 0

    def _is_down(self, node_id: str) -> bool:
        node = self.nodes[node_id]
        if not node.up:
            return True
        for lo, hi in self.down.get(node_id, ()):
            if lo <= self.clock.now < hi:
                return True
        return False

    def _latency(self, node_id: str) -> float:
        value = self.sampler.lognormal(self.l2_spec, "l2")
        return value * self.slow_factors.get(node_id, 1.0)

    def get_stripe(self, node_id, chunk_name, stripe_index):
        self.requests += 1
        self.contacted.add(node_id)
        if self._is_down(node_id):
            return False, None, self.failure_detect
        data = self.nodes[node_id].get_stripe(chunk_name, stripe_index)
        return True, data, self._latency(node_id)

    def put_stripe(self, node_id, chunk_name, stripe_index, data):
        if self._is_down(node_id):
            return False, self.failure_detect
        self.nodes[node_id].put_stripe(chunk_name, stripe_index, data)
        return True, 0.0


@dataclass
class FunctionImage:
    func_id: str
    cron: bool
    manifest_id: str
    touched: list  # [(ChunkRecord, ChunkKey|None)] fetched per start


@dataclass
class Bucket:
    starts: int = 0
    completions: int = 0
    rejected: int = 0
    l1_hits: int = 0
    l2_hits: int = 0
    origin_fetches: int = 0
    chunk_requests: int = 0
    l2_requests: int = 0
    max_in_flight: int = 0
    in_flight_time: float = 0.0
    latency_sum: float = 0.0
    hot_refs: int = 0
    hot_hits: int = 0


@dataclass
class StartRecord:
    latency: float
    max_chunk_latency: float
    touched_slow: bool
    l2_requests: int
    chunks: int


class _Start:
    __slots__ = ("image", "worker", "t0", "idx", "max_chunk_latency",
                 "touched_slow", "l2_requests")

    def __init__(self, image: FunctionImage, worker: int, t0: float):
        self.image = image
        self.worker = worker
        self.t0 = t0
        self.idx = 0
        self.max_chunk_latency = 0.0
        self.touched_slow = False
        self.l2_requests = 0


class Engine:
    """One simulation run; construct, then run(); read .result fields."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self.sampler = LatencySampler(config.seed)
        self._rng_arrivals = np.random.Generator(
            np.random.PCG64(_stream_seed(config.seed, "arrivals")))
        self._rng_pop = np.random.Generator(
            np.random.PCG64(_stream_seed(config.seed, "popularity")))
        self._rng_content = random.Random(
            f"content|{config.seed}")

        self.store = MemoryStore()
        self.root = self.store.create_root()
        self.functions: list[FunctionImage] = []
        self.cron_pool: deque[FunctionImage] = deque()
        self._base_chunks: list[bytes] | None = None

        topo = config.topology
        self.nodes = {f"node{i:02d}": CacheNode(f"node{i:02d}",
                                                topo.l2_node_bytes, k=topo.l2_k)
                      for i in range(topo.l2_nodes)}
        self.ring = HashRing(list(self.nodes)) if self.nodes else None
        self.transport = SimTransport(
            self.nodes, self.sampler, config.latency.l2,
            config.latency.failure_detect, config.latency.slow_factors,
            config.latency.down, self) if self.nodes else None
        self.l1s = [LRUKCache(topo.l1_bytes, k=topo.l1_k)
                    if topo.l1_bytes > 0 else None
                    for _ in range(topo.workers)]
        self.fetchers = [TieredFetcher(
            l1, self.ring, self.transport, self._origin_read,
            k=topo.erasure_k, redundant=topo.redundant, keep_plaintext=False,
            origin_cost=self._origin_cost) for l1 in self.l1s]
        self._slow_nodes = set(config.latency.slow_factors)

        # metrics
        self.buckets: dict[int, Bucket] = {}
        self.start_records: list[StartRecord] = []
        self.chunk_latencies = array("d")
        self.in_flight = 0
        self._if_changed_at = 0.0
        self.peak_in_flight = 0
        self.rejected_total = 0
        self.hot_evictions = 0
        self._hot_chunk_names: set[str] = set()
        self._completions_window: deque[tuple[float, float]] = deque()
        self._window_sum = 0.0
        self._rr_counter = 0
        self._zipf_cdf: np.ndarray | None = None
        self.flush_times: list[float] = []

        self._build_world()

    # -- world construction ------------------------------------------------
    def _chunk(self, label: str) -> bytes:
        size = self.config.topology.chunk_size
        # cheap deterministic content: hash-seeded stream, non-zero assured
        rng = random.Random(f"{label}|{self.config.seed}")
        return b"\x01" + rng.randbytes(size - 1)

    def _build_image(self, func_id: str, base: list[bytes], unique: int,
                     cron: bool) -> FunctionImage:
        size = self.config.topology.chunk_size
        plains = list(base)
        plains += [self._chunk(f"{func_id}|u{i}") for i in range(unique)]
        chunks = [PlainChunk(i, False, data) for i, data in enumerate(plains)]
        salt = Salt(b"sim|" + self.root.root_id.encode())

        def sink(name, ciphertext):
            return self.store.put_if_absent(self.root.root_id, KIND_CHUNK,
                                            name, ciphertext)

        result = ingest_chunks(iter(chunks), chunk_size=size,
                               image_length=len(chunks) * size, salt=salt,
                               customer=_SIM_CUSTOMER, sink=sink,
                               rng=lambda n: b"\x07" * n)
        self.store.record_upload(self.root.root_id, result.manifest_id,
                                 result.nonzero_chunks, result.unique_chunks)
        opened = open_manifest(result.manifest, _SIM_CUSTOMER)
        touched_count = (self.config.workload.touched_chunks if not cron
                         else len(chunks))
        touched = [(opened.records[i], opened.keys[i])
                   for i in range(min(touched_count, len(chunks)))]
        return FunctionImage(func_id=func_id, cron=cron,
                             manifest_id=result.manifest_id, touched=touched)

    def _build_world(self) -> None:
        w = self.config.workload
        base = [self._chunk(f"base|{i}") for i in range(w.base_chunks)]
        for f in range(w.functions):
            image = self._build_image(f"fn{f:04d}", base, w.unique_chunks,
                                      cron=False)
            self.functions.append(image)
            self._hot_chunk_names.update(r.name for r, _ in image.touched)
        if w.cron is not None:
            first = w.cron.first_at if w.cron.first_at is not None else w.cron.period
            bursts = 0
            t = first
            while t < w.duration:
                bursts += 1
                t += w.cron.period
            for b in range(bursts):
                for j in range(w.cron.burst_size):
                    self.cron_pool.append(self._build_image(
                        f"cron{b:03d}_{j:03d}", [], w.cron.chunks_per_function,
                        cron=True))
        if w.zipf_s >= 0 and w.functions:
            ranks = np.arange(1, w.functions + 1, dtype=np.float64)
            weights = ranks ** (-w.zipf_s)
            self._zipf_cdf = np.cumsum(weights / weights.sum())
        if self.config.topology.warm_l2 and self.ring is not None:
            self._warm_l2()
        for l1 in self.l1s:
            if l1 is not None:
                l1.on_evict = self._on_l1_evict

    def _warm_l2(self) -> None:
        k = self.config.topology.erasure_k
        seen: set[str] = set()
        for image in list(self.functions) + list(self.cron_pool):
            for record, _key in image.touched:
                if record.name in seen:
                    continue
                seen.add(record.name)
                ciphertext = self.store.get(self.root.root_id, KIND_CHUNK,
                                            record.name)
                stripes = encode(ciphertext, k=k).stripes
                owners = self.ring.locate_stripes(record.name, k + 1)
                for idx in range(k + 1):
                    self.nodes[owners[idx]].put_stripe(record.name, idx,
                                                       stripes[idx])

    def _on_l1_evict(self, name) -> None:
        if name in self._hot_chunk_names:
            self.hot_evictions += 1

    # -- plumbing ---------------------------------------------------------
    def _origin_read(self, name: str):
        try:
            return self.store.get(self.root.root_id, KIND_CHUNK, name)
        except NotFoundError:
            return None

    def _origin_cost(self, name: str) -> float:
        return self.sampler.lognormal(self.config.latency.origin, "origin")

    def push(self, t: float, action, payload=None) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, action, payload))

    def bucket(self, t: float | None = None) -> Bucket:
        idx = int((self.now if t is None else t) / self.config.bucket_width)
        b = self.buckets.get(idx)
        if b is None:
            b = self.buckets[idx] = Bucket()
        return b

    # -- workload ------------------------------------------------------------
    def _rate_at(self, t: float) -> float:
        rate = self.config.workload.arrival_rate
        for s in self.config.workload.spikes:
            if s.at <= t < s.at + s.duration:
                rate *= s.rate_multiplier
        return rate

    def _next_rate_boundary(self, t: float) -> float | None:
        upcoming = [s.at for s in self.config.workload.spikes if s.at > t]
        return min(upcoming) if upcoming else None

    def _schedule_arrival(self) -> None:
        rate = self._rate_at(self.now)
        if rate <= 0:
            boundary = self._next_rate_boundary(self.now)
            if boundary is None or boundary >= self.config.workload.duration:
                return
            self.push(boundary, "arrival")
            return
        dt = float(self._rng_arrivals.exponential(1.0 / rate))
        t = self.now + dt
        if t < self.config.workload.duration:
            self.push(t, "arrival")

    def _pick_function(self) -> FunctionImage:
        if self._zipf_cdf is None or len(self.functions) == 1:
            return self.functions[0]
        u = float(self._rng_pop.random())
        idx = int(np.searchsorted(self._zipf_cdf, u, side="left"))
        return self.functions[min(idx, len(self.functions) - 1)]

    def _assign_worker(self, image: FunctionImage) -> int:
        if self.config.topology.placement_affinity:
            digest = hashlib.sha256(image.func_id.encode()).digest()
            return int.from_bytes(digest[:4], "little") % len(self.fetchers)
        self._rr_counter += 1
        return (self._rr_counter - 1) % len(self.fetchers)

    # -- start lifecycle ----------------------------------------------------
    def _admit(self, image: FunctionImage) -> None:
        b = self.bucket()
        b.starts += 1
        limiter = self.config.limiter
        if limiter.enabled and self.in_flight >= limiter.max_in_flight:
            b.rejected += 1
            self.rejected_total += 1
            return
        self._account_in_flight(+1)
        self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        b.max_in_flight = max(b.max_in_flight, self.in_flight)
        start = _Start(image, self._assign_worker(image), self.now)
        self._step(start)

    def _step(self, start: _Start) -> None:
        if start.idx >= len(start.image.touched):
            self._complete(start)
            return
        record, key = start.image.touched[start.idx]
        start.idx += 1
        fetcher = self.fetchers[start.worker]
        if self.transport is not None:
            self.transport.contacted.clear()
        result = fetcher.fetch(record, key)
        latency = result.latency
        if result.source_tier == TIER_L1:
            latency += self.sampler.lognormal(self.config.latency.l1, "l1")

        b = self.bucket()
        b.chunk_requests += 1
        b.l2_requests += result.l2_requests
        if result.source_tier == TIER_L1:
            b.l1_hits += 1
        elif result.source_tier == TIER_L2:
            b.l2_hits += 1
        else:
            b.origin_fetches += 1
        if not start.image.cron:
            b.hot_refs += 1
            if result.source_tier == TIER_L1:
                b.hot_hits += 1
        self.chunk_latencies.append(latency)
        start.max_chunk_latency = max(start.max_chunk_latency, latency)
        start.l2_requests += result.l2_requests
        if (self.transport is not None and self._slow_nodes
                and not self._slow_nodes.isdisjoint(self.transport.contacted)):
            start.touched_slow = True
        self.push(self.now + latency, "step", start)

    def _account_in_flight(self, delta: int) -> None:
        t0, t1, level = self._if_changed_at, self.now, self.in_flight
        if t1 > t0 and level:
            bw = self.config.bucket_width
            i0, i1 = int(t0 / bw), int(t1 / bw)
            if i0 == i1:
                self.bucket(t0).in_flight_time += level * (t1 - t0)
            else:
                self.bucket(t0).in_flight_time += level * ((i0 + 1) * bw - t0)
                for i in range(i0 + 1, i1):
                    self.bucket(i * bw).in_flight_time += level * bw
                self.bucket(t1).in_flight_time += level * (t1 - i1 * bw)
        self._if_changed_at = t1
        self.in_flight += delta

    def mean_in_flight(self, t0: float = 0.0, t1: float | None = None) -> float:
        """Time-weighted mean concurrency over [t0, t1] from bucket data."""
        total = weight = 0.0
        for idx, b in self.buckets.items():
            lo = idx * self.config.bucket_width
            if lo < t0 or (t1 is not None and lo >= t1):
                continue
            total += b.in_flight_time
            weight += self.config.bucket_width
        return total / weight if weight else 0.0

    def _complete(self, start: _Start) -> None:
        latency = self.now - start.t0
        self._account_in_flight(-1)
        b = self.bucket()
        b.completions += 1
        b.latency_sum += latency
        self.start_records.append(StartRecord(
            latency=latency, max_chunk_latency=start.max_chunk_latency,
            touched_slow=start.touched_slow, l2_requests=start.l2_requests,
            chunks=len(start.image.touched)))
        self._completions_window.append((self.now, latency))
        self._window_sum += latency
        if (self.config.feedback.enabled
                and self.now < self.config.workload.duration):
            self._feedback_fill()

    # -- feedback ---------------------------------------------------------
    # With feedback enabled the arrival process is concurrency-driven:
    # admission maintains in-flight at offered_rate x observed mean start
    # latency (the demand concurrency of Little's law), so rising latency
    # directly raises concurrent load. Completions trigger replacement;
    # the periodic tick recomputes the target and fills larger deficits.
    def _mean_recent_latency(self) -> float:
        window = self.config.feedback.window
        while (self._completions_window
               and self._completions_window[0][0] < self.now - window):
            _, old = self._completions_window.popleft()
            self._window_sum -= old
        if not self._completions_window:
            touched = self.config.workload.touched_chunks
            return touched * self.config.latency.l2.median
        return self._window_sum / len(self._completions_window)

    def _feedback_target(self) -> int:
        target = self._rate_at(self.now) * self._mean_recent_latency()
        limiter = self.config.limiter
        if limiter.enabled:
            target = min(target, limiter.max_in_flight)
        return int(target)

    def _feedback_fill(self) -> None:
        deficit = self._feedback_target() - self.in_flight
        for _ in range(max(0, deficit)):
            self._admit(self._pick_function())

    def _feedback_tick(self) -> None:
        self._feedback_fill()
        t = self.now + self.config.feedback.interval
        if t < self.config.workload.duration:
            self.push(t, "feedback")

    # -- actions ----------------------------------------------------------
    def flush_caches(self) -> None:
        for l1 in self.l1s:
            if l1 is not None:
                l1.clear()
        for node in self.nodes.values():
            node.flush()
        self.flush_times.append(self.now)

    def schedule_flush(self, at: float) -> None:
        self.push(at, "flush")

    # -- main loop -----------------------------------------------------------
    def run(self) -> None:
        w = self.config.workload
        if w.arrival_rate > 0 and self.functions and not self.config.feedback.enabled:
            self._schedule_arrival()
        if w.cron is not None:
            first = w.cron.first_at if w.cron.first_at is not None else w.cron.period
            t = first
            while t < w.duration:
                self.push(t, "cron")
                t += w.cron.period
        if self.config.feedback.enabled:
            self.push(self.config.feedback.interval, "feedback")

        while self._heap:
            t, _seq, action, payload = heapq.heappop(self._heap)
            self.now = t
            if action == "arrival":
                if self._rate_at(self.now) > 0:
                    self._admit(self._pick_function())
                self._schedule_arrival()
            elif action == "step":
                self._step(payload)
            elif action == "cron":
                burst = self.config.workload.cron.burst_size
                for _ in range(burst):
                    if self.cron_pool:
                        self._admit(self.cron_pool.popleft())
            elif action == "feedback":
                self._feedback_tick()
            elif action == "flush":
                self.flush_caches()
            else:  # pragma: no cover
                raise AssertionError(f"unknown event {action}")
