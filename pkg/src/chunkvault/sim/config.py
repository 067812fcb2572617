"""Simulation configuration: workload, latency model, topology, limiter.

Configs load from a single YAML document; validation errors name the
offending field path. Latency defaults are medians observed in a large
production deployment of a system of this shape (L2 hit ~550us, origin
~36ms) and are defaults only, not normative targets.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import yaml

from chunkvault.errors import ValidationError

SIM_CHUNK_SIZE = 4096


@dataclass(frozen=True)
class TierLatency:
    """Lognormal spec: sample = median * exp(sigma * Z)."""

    median: float
    sigma: float = 0.5


@dataclass(frozen=True)
class LatencyModelSpec:
    l1: TierLatency = TierLatency(median=0.0, sigma=0.0)
    l2: TierLatency = TierLatency(median=550e-6, sigma=0.5)
    origin: TierLatency = TierLatency(median=36e-3, sigma=0.5)
    failure_detect: float = 100e-6
    slow_factors: dict = field(default_factory=dict)   # node_id -> multiplier
    down: dict = field(default_factory=dict)           # node_id -> [[from, until], ...]


@dataclass(frozen=True)
class SpikeSpec:
    at: float
    rate_multiplier: float
    duration: float


@dataclass(frozen=True)
class CronSpec:
    """Periodic burst of one-shot functions (the scan workload)."""

    period: float
    burst_size: int
    chunks_per_function: int
    first_at: float | None = None  # defaults to one full period in


@dataclass(frozen=True)
class WorkloadSpec:
    functions: int
    base_chunks: int            # shared prefix across every function image
    unique_chunks: int          # per-function tail
    touched_chunks: int         # chunks fetched per start
    zipf_s: float = 1.1
    arrival_rate: float = 10.0  # starts per virtual second
    duration: float = 60.0
    spikes: tuple[SpikeSpec, ...] = ()
    cron: CronSpec | None = None


@dataclass(frozen=True)
class TopologySpec:
    workers: int = 4
    l1_bytes: int = 64 * 1024 * 1024
    l1_k: int = 2
    l2_nodes: int = 20
    l2_node_bytes: int = 256 * 1024 * 1024
    l2_k: int = 2
    erasure_k: int = 4
    redundant: bool = True      # False = k-of-k baseline
    placement_affinity: bool = False
    warm_l2: bool = False       # pre-populate every stripe before t=0
    chunk_size: int = SIM_CHUNK_SIZE


@dataclass(frozen=True)
class LimiterSpec:
    enabled: bool = True
    max_in_flight: int = 64


@dataclass(frozen=True)
class FeedbackSpec:
    """Little's-law demand model: target in-flight concurrency follows
    arrival_rate x observed mean start latency."""

    enabled: bool = False
    interval: float = 0.25      # seconds between top-up ticks
    window: float = 5.0         # latency observation window


@dataclass(frozen=True)
class SimConfig:
    workload: WorkloadSpec
    latency: LatencyModelSpec = LatencyModelSpec()
    topology: TopologySpec = TopologySpec()
    limiter: LimiterSpec = LimiterSpec()
    feedback: FeedbackSpec = FeedbackSpec()
    seed: int = 0
    bucket_width: float = 1.0

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ValidationError(f"{path}: {message}")


def validate_config(config: SimConfig) -> SimConfig:
    w, t = config.workload, config.topology
    _require(w.functions >= 1, "workload.functions", "must be >= 1")
    _require(w.base_chunks >= 0, "workload.base_chunks", "must be >= 0")
    _require(w.unique_chunks >= 0, "workload.unique_chunks", "must be >= 0")
    _require(w.base_chunks + w.unique_chunks >= 1,
             "workload.base_chunks", "image must have at least one chunk")
    _require(1 <= w.touched_chunks <= w.base_chunks + w.unique_chunks,
             "workload.touched_chunks",
             f"must be in 1..{w.base_chunks + w.unique_chunks} (chunks per image)")
    _require(w.arrival_rate >= 0, "workload.arrival_rate", "must be >= 0")
    _require(w.duration > 0, "workload.duration", "must be > 0")
    _require(w.zipf_s >= 0, "workload.zipf_s", "must be >= 0")
    for i, s in enumerate(w.spikes):
        _require(s.rate_multiplier >= 0, f"workload.spikes[{i}].rate_multiplier",
                 "must be >= 0")
        _require(s.duration > 0, f"workload.spikes[{i}].duration", "must be > 0")
    if w.cron is not None:
        _require(w.cron.period > 0, "workload.cron.period", "must be > 0")
        _require(w.cron.burst_size >= 1, "workload.cron.burst_size", "must be >= 1")
        _require(w.cron.chunks_per_function >= 1,
                 "workload.cron.chunks_per_function", "must be >= 1")
    _require(t.workers >= 1, "topology.workers", "must be >= 1")
    _require(t.l2_nodes >= 0, "topology.l2_nodes", "must be >= 0")
    _require(2 <= t.erasure_k <= 16, "topology.erasure_k", "must be in 2..16")
    _require(t.l1_k >= 1, "topology.l1_k", "must be >= 1")
    _require(t.l2_k >= 1, "topology.l2_k", "must be >= 1")
    _require(t.chunk_size > 0 and t.chunk_size % t.erasure_k == 0,
             "topology.chunk_size", "must be positive and divisible by erasure_k")
    _require(config.limiter.max_in_flight >= 1,
             "limiter.max_in_flight", "must be >= 1")
    _require(config.bucket_width > 0, "bucket_width", "must be > 0")
    _require(config.latency.failure_detect >= 0,
             "latency.failure_detect", "must be >= 0")
    for tier in ("l1", "l2", "origin"):
        spec = getattr(config.latency, tier)
        _require(spec.median >= 0, f"latency.{tier}.median", "must be >= 0")
        _require(spec.sigma >= 0, f"latency.{tier}.sigma", "must be >= 0")
    for node, windows in config.latency.down.items():
        for j, win in enumerate(windows):
            _require(len(win) == 2 and win[0] <= win[1],
                     f"latency.down.{node}[{j}]", "must be [from, until]")
    return config


def _take(d: dict, path: str, allowed: set[str]) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ValidationError(f"{path}: unknown field(s) {sorted(unknown)}")


def _tier(d, path) -> TierLatency:
    _take(d, path, {"median", "sigma"})
    _require("median" in d, f"{path}.median", "is required")
    return TierLatency(median=float(d["median"]),
                       sigma=float(d.get("sigma", 0.5)))


def config_from_dict(raw: dict) -> SimConfig:
    """Build and validate a SimConfig from parsed YAML/JSON."""
    if not isinstance(raw, dict):
        raise ValidationError("config: top level must be a mapping")
    _take(raw, "config", {"workload", "latency", "topology", "limiter",
                          "feedback", "seed", "bucket_width"})
    _require("workload" in raw, "workload", "is required")

    w = dict(raw["workload"])
    _take(w, "workload", {"functions", "base_chunks", "unique_chunks",
                          "touched_chunks", "zipf_s", "arrival_rate",
                          "duration", "spikes", "cron"})
    for req in ("functions", "base_chunks", "unique_chunks", "touched_chunks"):
        _require(req in w, f"workload.{req}", "is required")
    spikes = tuple(
        SpikeSpec(at=float(s["at"]), rate_multiplier=float(s["rate_multiplier"]),
                  duration=float(s["duration"]))
        for s in w.get("spikes", ()))
    cron = None
    if w.get("cron") is not None:
        c = dict(w["cron"])
        _take(c, "workload.cron", {"period", "burst_size", "chunks_per_function",
                                   "first_at"})
        cron = CronSpec(period=float(c["period"]),
                        burst_size=int(c["burst_size"]),
                        chunks_per_function=int(c["chunks_per_function"]),
                        first_at=None if c.get("first_at") is None
                        else float(c["first_at"]))
    workload = WorkloadSpec(
        functions=int(w["functions"]), base_chunks=int(w["base_chunks"]),
        unique_chunks=int(w["unique_chunks"]),
        touched_chunks=int(w["touched_chunks"]),
        zipf_s=float(w.get("zipf_s", 1.1)),
        arrival_rate=float(w.get("arrival_rate", 10.0)),
        duration=float(w.get("duration", 60.0)), spikes=spikes, cron=cron)

    latency = LatencyModelSpec()
    if "latency" in raw:
        l = dict(raw["latency"])
        _take(l, "latency", {"l1", "l2", "origin", "failure_detect",
                             "slow_factors", "down"})
        latency = LatencyModelSpec(
            l1=_tier(l["l1"], "latency.l1") if "l1" in l else LatencyModelSpec().l1,
            l2=_tier(l["l2"], "latency.l2") if "l2" in l else LatencyModelSpec().l2,
            origin=_tier(l["origin"], "latency.origin")
            if "origin" in l else LatencyModelSpec().origin,
            failure_detect=float(l.get("failure_detect", 100e-6)),
            slow_factors={str(k): float(v)
                          for k, v in (l.get("slow_factors") or {}).items()},
            down={str(k): [[float(a), float(b)] for a, b in v]
                  for k, v in (l.get("down") or {}).items()})

    topology = TopologySpec()
    if "topology" in raw:
        t = dict(raw["topology"])
        _take(t, "topology", {"workers", "l1_bytes", "l1_k", "l2_nodes",
                              "l2_node_bytes", "l2_k", "erasure_k", "redundant",
                              "placement_affinity", "warm_l2", "chunk_size"})
        defaults = TopologySpec()
        topology = TopologySpec(
            workers=int(t.get("workers", defaults.workers)),
            l1_bytes=int(t.get("l1_bytes", defaults.l1_bytes)),
            l1_k=int(t.get("l1_k", defaults.l1_k)),
            l2_nodes=int(t.get("l2_nodes", defaults.l2_nodes)),
            l2_node_bytes=int(t.get("l2_node_bytes", defaults.l2_node_bytes)),
            l2_k=int(t.get("l2_k", defaults.l2_k)),
            erasure_k=int(t.get("erasure_k", defaults.erasure_k)),
            redundant=bool(t.get("redundant", defaults.redundant)),
            placement_affinity=bool(t.get("placement_affinity",
                                          defaults.placement_affinity)),
            warm_l2=bool(t.get("warm_l2", defaults.warm_l2)),
            chunk_size=int(t.get("chunk_size", defaults.chunk_size)))

    limiter = LimiterSpec()
    if "limiter" in raw:
        lm = dict(raw["limiter"])
        _take(lm, "limiter", {"enabled", "max_in_flight"})
        limiter = LimiterSpec(enabled=bool(lm.get("enabled", True)),
                              max_in_flight=int(lm.get("max_in_flight", 64)))

    feedback = FeedbackSpec()
    if "feedback" in raw:
        fb = dict(raw["feedback"])
        _take(fb, "feedback", {"enabled", "interval", "window"})
        feedback = FeedbackSpec(enabled=bool(fb.get("enabled", False)),
                                interval=float(fb.get("interval", 0.25)),
                                window=float(fb.get("window", 5.0)))

    config = SimConfig(workload=workload, latency=latency, topology=topology,
                       limiter=limiter, feedback=feedback,
                       seed=int(raw.get("seed", 0)),
                       bucket_width=float(raw.get("bucket_width", 1.0)))
    return validate_config(config)


def load_config(path: str) -> SimConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return config_from_dict(raw)
