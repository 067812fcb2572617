"""Top-level simulation entry points.

run_sim: one seeded pass over a config. cold_start_drill: warm up, flush
L1+L2 mid-run, report recovery time and backlog behaviour. scan
resistance: paired same-seed runs comparing LRU-1 and LRU-2 under a cron
burst, tracking the hot set's hit rate.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from chunkvault.errors import ValidationError
from chunkvault.sim.config import SimConfig, validate_config
from chunkvault.sim.engine import Engine
from chunkvault.sim.report import BucketRow, MetricsReport, build_report


def run_sim(config: SimConfig, flush_at: float | None = None) -> MetricsReport:
    validate_config(config)
    engine = Engine(config)
    if flush_at is not None:
        engine.schedule_flush(flush_at)
    engine.run()
    return build_report(engine, config)


@dataclass
class DrillReport:
    pre_flush_l2_hit_rate: float
    recovery_bucket: float | None    # t0 of first recovered bucket
    recovery_buckets_after_flush: int | None
    post_flush_max_in_flight: int
    rejected_after_flush: int
    recovered: bool
    report: MetricsReport


def cold_start_drill(config: SimConfig, flush_at: float,
                     recovery_threshold: float = 0.9) -> DrillReport:
    """Flush all caches mid-run and measure L2 hit-rate recovery.

    Recovery is the first post-flush bucket whose L2 hit rate (among
    requests that reached L2/origin) regains ``recovery_threshold`` of the
    mean pre-flush rate.
    """
    if not 0 < flush_at < config.workload.duration:
        raise ValidationError("flush_at must fall inside the run")
    report = run_sim(config, flush_at=flush_at)

    def rate_of(row: BucketRow) -> float | None:
        return row.l2_hit_rate

    pre = [rate_of(r) for r in report.buckets
           if r.t0 + config.bucket_width <= flush_at and rate_of(r) is not None]
    pre_rate = sum(pre) / len(pre) if pre else 0.0
    recovery_t = None
    for row in report.buckets:
        if row.t0 < flush_at:
            continue
        rate = rate_of(row)
        if rate is not None and pre_rate > 0 and rate >= recovery_threshold * pre_rate:
            recovery_t = row.t0
            break
    post_rows = [r for r in report.buckets if r.t0 >= flush_at]
    return DrillReport(
        pre_flush_l2_hit_rate=pre_rate,
        recovery_bucket=recovery_t,
        recovery_buckets_after_flush=None if recovery_t is None
        else int((recovery_t - flush_at) / config.bucket_width),
        post_flush_max_in_flight=max((r.max_in_flight for r in post_rows),
                                     default=0),
        rejected_after_flush=sum(r.rejected for r in post_rows),
        recovered=recovery_t is not None,
        report=report)


@dataclass
class ScanReport:
    dip_lru1: float
    dip_lru2: float
    hot_evictions_lru1: int
    hot_evictions_lru2: int
    series_lru1: list[tuple[float, float | None]]  # (t0, hot hit rate)
    series_lru2: list[tuple[float, float | None]]
    report_lru1: MetricsReport
    report_lru2: MetricsReport


def _hot_dip(report: MetricsReport, burst_at: float) -> float:
    """Hot-set hit-rate dip: mean pre-burst rate minus post-burst minimum."""
    rates_pre = [r.hot_hit_rate for r in report.buckets
                 if r.t0 < burst_at and r.hot_hit_rate is not None]
    rates_post = [r.hot_hit_rate for r in report.buckets
                  if r.t0 >= burst_at and r.hot_hit_rate is not None]
    if not rates_pre or not rates_post:
        return 0.0
    pre = sum(rates_pre) / len(rates_pre)
    return max(0.0, pre - min(rates_post))


def scan_resistance_experiment(config: SimConfig) -> ScanReport:
    """Same seed, same trace shape, L1 policy LRU-1 vs LRU-2."""
    validate_config(config)
    reports = {}
    for k in (1, 2):
        cfg = dataclasses.replace(
            config, topology=dataclasses.replace(config.topology, l1_k=k))
        reports[k] = run_sim(cfg)
    cron = config.workload.cron
    burst_at = (cron.first_at if cron and cron.first_at is not None
                else (cron.period if cron else config.workload.duration))
    return ScanReport(
        dip_lru1=_hot_dip(reports[1], burst_at),
        dip_lru2=_hot_dip(reports[2], burst_at),
        hot_evictions_lru1=reports[1].hot_evictions,
        hot_evictions_lru2=reports[2].hot_evictions,
        series_lru1=[(r.t0, r.hot_hit_rate) for r in reports[1].buckets],
        series_lru2=[(r.t0, r.hot_hit_rate) for r in reports[2].buckets],
        report_lru1=reports[1],
        report_lru2=reports[2])
