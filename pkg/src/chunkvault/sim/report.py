"""Simulation outputs: per-bucket tier metrics, latency eCDFs, JSON/CSV."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass

from chunkvault.sim.config import SimConfig
from chunkvault.sim.engine import Engine
from chunkvault.stats import ecdf, percentile

_ECDF_MAX_ROWS = 10_000


@dataclass(frozen=True)
class BucketRow:
    t0: float
    starts: int
    completions: int
    rejected: int
    l1_hits: int
    l2_hits: int
    origin_fetches: int
    chunk_requests: int
    l2_requests: int
    max_in_flight: int
    mean_in_flight: float
    mean_start_latency: float
    l1_fraction: float
    l2_fraction: float
    origin_fraction: float
    l2_hit_rate: float | None   # among requests that reached L2/origin
    hot_hit_rate: float | None  # L1 hit rate of steady-function requests


@dataclass
class MetricsReport:
    config_digest: str
    seed: int
    buckets: list[BucketRow]
    total_starts: int
    completed_starts: int
    rejected_starts: int
    peak_in_flight: int
    tier_totals: dict
    start_latency_p50: float
    start_latency_p999: float
    chunk_latency_p999: float
    fraction_starts_with_tail_sample: float
    fraction_starts_touched_slow: float
    mean_l2_requests_per_start: float
    dedup: dict
    hot_evictions: int
    flush_times: list[float]
    start_latencies: list[float]
    chunk_latency_ecdf: list[tuple[float, float]]
    start_latency_ecdf: list[tuple[float, float]]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def write(self, out_dir: str, prefix: str = "sim") -> list[str]:
        """Write <prefix>.json plus eCDF CSVs (value, cumulative_fraction)."""
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        json_path = os.path.join(out_dir, f"{prefix}_report.json")
        with open(json_path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
        paths.append(json_path)
        for name, table in (("chunk_latency", self.chunk_latency_ecdf),
                            ("start_latency", self.start_latency_ecdf)):
            csv_path = os.path.join(out_dir, f"{prefix}_{name}_ecdf.csv")
            with open(csv_path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["value", "cumulative_fraction"])
                writer.writerows(table)
            paths.append(csv_path)
        return paths


def _thin(table: list[tuple[float, float]]) -> list[tuple[float, float]]:
    if len(table) <= _ECDF_MAX_ROWS:
        return table
    step = (len(table) + _ECDF_MAX_ROWS - 1) // _ECDF_MAX_ROWS
    thinned = table[::step]
    if thinned[-1] != table[-1]:
        thinned.append(table[-1])
    return thinned


def build_report(engine: Engine, config: SimConfig) -> MetricsReport:
    rows = []
    for idx in sorted(engine.buckets):
        b = engine.buckets[idx]
        total = b.chunk_requests
        l2_path = b.l2_hits + b.origin_fetches
        rows.append(BucketRow(
            t0=idx * config.bucket_width,
            starts=b.starts, completions=b.completions, rejected=b.rejected,
            l1_hits=b.l1_hits, l2_hits=b.l2_hits,
            origin_fetches=b.origin_fetches, chunk_requests=total,
            l2_requests=b.l2_requests, max_in_flight=b.max_in_flight,
            mean_in_flight=b.in_flight_time / config.bucket_width,
            mean_start_latency=b.latency_sum / b.completions
            if b.completions else 0.0,
            l1_fraction=b.l1_hits / total if total else 0.0,
            l2_fraction=b.l2_hits / total if total else 0.0,
            origin_fraction=b.origin_fetches / total if total else 0.0,
            l2_hit_rate=b.l2_hits / l2_path if l2_path else None,
            hot_hit_rate=b.hot_hits / b.hot_refs if b.hot_refs else None))

    starts = engine.start_records
    start_latencies = [s.latency for s in starts]
    chunk_lats = list(engine.chunk_latencies)
    chunk_p999 = percentile(chunk_lats, 0.999) if chunk_lats else 0.0
    tail_frac = (sum(1 for s in starts if s.max_chunk_latency > chunk_p999)
                 / len(starts)) if starts else 0.0
    slow_frac = (sum(1 for s in starts if s.touched_slow) / len(starts)
                 if starts else 0.0)
    mean_l2_reqs = (sum(s.l2_requests for s in starts) / len(starts)
                    if starts else 0.0)

    try:
        dedup_stats = engine.store.dedup_stats(engine.root.root_id)
        dedup = {
            "uploads": dedup_stats.uploads,
            "zero_unique_fraction": dedup_stats.zero_unique_fraction,
            "nontrivial_mean": dedup_stats.nontrivial_mean,
        }
    except Exception:
        dedup = {}

    return MetricsReport(
        config_digest=config.digest(),
        seed=config.seed,
        buckets=rows,
        total_starts=sum(b.starts for b in engine.buckets.values()),
        completed_starts=len(starts),
        rejected_starts=engine.rejected_total,
        peak_in_flight=engine.peak_in_flight,
        tier_totals={
            "l1_hits": sum(b.l1_hits for b in engine.buckets.values()),
            "l2_hits": sum(b.l2_hits for b in engine.buckets.values()),
            "origin_fetches": sum(b.origin_fetches
                                  for b in engine.buckets.values()),
            "chunk_requests": sum(b.chunk_requests
                                  for b in engine.buckets.values()),
            "l2_requests": sum(b.l2_requests for b in engine.buckets.values()),
        },
        start_latency_p50=percentile(start_latencies, 0.5)
        if start_latencies else 0.0,
        start_latency_p999=percentile(start_latencies, 0.999)
        if start_latencies else 0.0,
        chunk_latency_p999=chunk_p999,
        fraction_starts_with_tail_sample=tail_frac,
        fraction_starts_touched_slow=slow_frac,
        mean_l2_requests_per_start=mean_l2_reqs,
        dedup=dedup,
        hot_evictions=engine.hot_evictions,
        flush_times=list(engine.flush_times),
        start_latencies=start_latencies,
        chunk_latency_ecdf=_thin(ecdf(chunk_lats)),
        start_latency_ecdf=_thin(ecdf(start_latencies)))
