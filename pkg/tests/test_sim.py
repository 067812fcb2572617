"""Simulator: determinism, conservation, limiter, feedback, experiments."""

import math

import pytest

from chunkvault.errors import ValidationError
from chunkvault.sim import (cold_start_drill, config_from_dict, run_sim,
                            scan_resistance_experiment, validate_config)
from chunkvault.sim.config import (CronSpec, FeedbackSpec, LatencyModelSpec,
                                   LimiterSpec, SimConfig, SpikeSpec,
                                   TierLatency, TopologySpec, WorkloadSpec)


def small_config(**overrides) -> SimConfig:
    base = dict(
        workload=WorkloadSpec(functions=4, base_chunks=6, unique_chunks=4,
                              touched_chunks=8, arrival_rate=30, duration=8.0),
        topology=TopologySpec(workers=2, l1_bytes=1 << 22, l2_nodes=6,
                              l2_node_bytes=1 << 24, warm_l2=True),
        limiter=LimiterSpec(enabled=True, max_in_flight=50),
        seed=3,
        bucket_width=1.0,
    )
    base.update(overrides)
    return SimConfig(**base)


def test_same_seed_identical_reports():
    cfg = small_config()
    a = run_sim(cfg)
    b = run_sim(cfg)
    assert a.to_json() == b.to_json()


def test_different_seed_differs():
    a = run_sim(small_config(seed=1))
    b = run_sim(small_config(seed=2))
    assert a.to_json() != b.to_json()


def test_conservation_per_bucket():
    report = run_sim(small_config())
    for row in report.buckets:
        assert row.l1_hits + row.l2_hits + row.origin_fetches == row.chunk_requests
        if row.chunk_requests:
            assert row.l1_fraction + row.l2_fraction + row.origin_fraction == \
                pytest.approx(1.0)
    totals = report.tier_totals
    assert totals["l1_hits"] + totals["l2_hits"] + totals["origin_fetches"] == \
        totals["chunk_requests"]


def test_warm_l2_serves_first_access_without_origin():
    report = run_sim(small_config())
    assert report.tier_totals["origin_fetches"] == 0
    assert report.tier_totals["l2_hits"] > 0


def test_cold_l2_first_accesses_hit_origin_then_l2():
    cfg = small_config(topology=TopologySpec(workers=2, l1_bytes=0,
                                             l2_nodes=6, l2_node_bytes=1 << 24,
                                             warm_l2=False))
    report = run_sim(cfg)
    assert report.tier_totals["origin_fetches"] > 0
    assert report.tier_totals["l2_hits"] > 0  # write-back populated L2


def test_limiter_bounds_in_flight_and_rejects():
    cfg = small_config(
        workload=WorkloadSpec(functions=4, base_chunks=6, unique_chunks=4,
                              touched_chunks=8, arrival_rate=400, duration=6.0),
        topology=TopologySpec(workers=2, l1_bytes=0, l2_nodes=6,
                              l2_node_bytes=1 << 24, warm_l2=True),
        latency=LatencyModelSpec(l2=TierLatency(median=5e-3, sigma=0.3)),
        limiter=LimiterSpec(enabled=True, max_in_flight=10))
    report = run_sim(cfg)
    assert report.peak_in_flight <= 10
    assert report.rejected_starts > 0
    assert all(r.max_in_flight <= 10 for r in report.buckets)


def test_constant_work_l2_requests():
    cfg = small_config()
    report = run_sim(cfg)
    k = cfg.topology.erasure_k
    non_l1 = (report.tier_totals["l2_hits"]
              + report.tier_totals["origin_fetches"])
    assert report.tier_totals["l2_requests"] == non_l1 * (k + 1)


def test_four_of_four_issues_k_requests():
    cfg = small_config(topology=TopologySpec(
        workers=2, l1_bytes=0, l2_nodes=6, l2_node_bytes=1 << 24,
        warm_l2=True, redundant=False))
    report = run_sim(cfg)
    k = cfg.topology.erasure_k
    assert report.tier_totals["l2_requests"] == \
        report.tier_totals["chunk_requests"] * k


def test_littles_law_feedback():
    # feedback drives in-flight toward rate x mean latency at steady state
    cfg = small_config(
        workload=WorkloadSpec(functions=4, base_chunks=6, unique_chunks=4,
                              touched_chunks=8, arrival_rate=40, duration=30.0),
        topology=TopologySpec(workers=2, l1_bytes=0, l2_nodes=6,
                              l2_node_bytes=1 << 24, warm_l2=True),
        latency=LatencyModelSpec(l2=TierLatency(median=20e-3, sigma=0.2)),
        limiter=LimiterSpec(enabled=False, max_in_flight=1),
        feedback=FeedbackSpec(enabled=True, interval=0.1, window=4.0))
    report = run_sim(cfg)
    steady = [r for r in report.buckets if 15.0 <= r.t0 < 28.0]
    mean_latency = (sum(r.mean_start_latency * r.completions for r in steady)
                    / sum(r.completions for r in steady))
    target = 40 * mean_latency
    observed = sum(r.mean_in_flight for r in steady) / len(steady)
    assert observed == pytest.approx(target, rel=0.05)


def test_spike_raises_arrivals():
    quiet = run_sim(small_config())
    spiky = run_sim(small_config(
        workload=WorkloadSpec(functions=4, base_chunks=6, unique_chunks=4,
                              touched_chunks=8, arrival_rate=30, duration=8.0,
                              spikes=(SpikeSpec(at=4.0, rate_multiplier=6.0,
                                                duration=2.0),))))
    assert spiky.total_starts > quiet.total_starts * 1.5


def test_slow_node_fraction_matches_analytic_small_scale():
    # 4-chunk starts across many functions, so per-start node exposure is
    # effectively a fresh draw and the 1-(1-p)^r analytic applies
    cfg = SimConfig(
        workload=WorkloadSpec(functions=300, base_chunks=0, unique_chunks=4,
                              touched_chunks=4, zipf_s=0.0, arrival_rate=60,
                              duration=50.0),
        topology=TopologySpec(workers=2, l1_bytes=0, l2_nodes=20,
                              l2_node_bytes=1 << 26, warm_l2=True),
        latency=LatencyModelSpec(slow_factors={"node03": 10.0}),
        limiter=LimiterSpec(enabled=True, max_in_flight=10 ** 6),
        seed=11)
    report = run_sim(cfg)
    starts = report.completed_starts
    reqs_per_start = report.mean_l2_requests_per_start
    slow_share = _slow_share(cfg, report)
    analytic = 1 - (1 - slow_share) ** reqs_per_start
    assert starts > 2500
    assert report.fraction_starts_touched_slow == pytest.approx(analytic, abs=0.06)


def _slow_share(cfg, report):
    # per-request probability of touching the slow node, from ring geometry:
    # measured as requests to it / total requests via a direct ring scan
    from chunkvault.cache.ring import HashRing
    ring = HashRing([f"node{i:02d}" for i in range(cfg.topology.l2_nodes)])
    hits = total = 0
    import hashlib
    for i in range(4000):
        name = hashlib.sha256(f"probe{i}".encode()).hexdigest()
        for node in ring.locate_stripes(name, cfg.topology.erasure_k + 1):
            total += 1
            hits += node == "node03"
    return hits / total


def test_cold_start_drill_recovers_with_limiter():
    cfg = small_config(
        workload=WorkloadSpec(functions=4, base_chunks=6, unique_chunks=4,
                              touched_chunks=8, arrival_rate=60, duration=24.0),
        topology=TopologySpec(workers=2, l1_bytes=0, l2_nodes=6,
                              l2_node_bytes=1 << 24, warm_l2=True),
        limiter=LimiterSpec(enabled=True, max_in_flight=16))
    drill = cold_start_drill(cfg, flush_at=12.0)
    assert drill.pre_flush_l2_hit_rate > 0.9
    assert drill.recovered
    assert drill.post_flush_max_in_flight <= 16
    assert drill.report.flush_times == [12.0]


def test_flush_forces_origin_traffic():
    cfg = small_config(
        workload=WorkloadSpec(functions=4, base_chunks=6, unique_chunks=4,
                              touched_chunks=8, arrival_rate=60, duration=24.0))
    report = run_sim(cfg, flush_at=12.0)
    post = [r for r in report.buckets if r.t0 >= 12.0]
    assert sum(r.origin_fetches for r in post) > 0


def test_scan_resistance_lru2_smaller_dip():
    cfg = SimConfig(
        workload=WorkloadSpec(functions=6, base_chunks=0, unique_chunks=10,
                              touched_chunks=10, zipf_s=0.4, arrival_rate=40,
                              duration=30.0,
                              cron=CronSpec(period=15.0, burst_size=120,
                                            chunks_per_function=4)),
        topology=TopologySpec(workers=1, l1_bytes=64 * 4096, l2_nodes=4,
                              l2_node_bytes=1 << 26, warm_l2=True),
        limiter=LimiterSpec(enabled=True, max_in_flight=10 ** 6),
        seed=5)
    scan = scan_resistance_experiment(cfg)
    assert scan.dip_lru2 < scan.dip_lru1
    # capacity covers the hot set (60 chunks) plus in-transit scan slack:
    # one-shot items only ever displace other one-shot items
    assert scan.hot_evictions_lru2 == 0


def test_scan_resistance_no_burst_within_noise():
    cfg = SimConfig(
        workload=WorkloadSpec(functions=6, base_chunks=0, unique_chunks=10,
                              touched_chunks=10, zipf_s=0.4, arrival_rate=40,
                              duration=20.0),
        topology=TopologySpec(workers=1, l1_bytes=60 * 4096, l2_nodes=4,
                              l2_node_bytes=1 << 26, warm_l2=True),
        limiter=LimiterSpec(enabled=True, max_in_flight=10 ** 6),
        seed=5)
    scan = scan_resistance_experiment(cfg)
    assert abs(scan.dip_lru1 - scan.dip_lru2) < 0.05


def test_report_written_files(tmp_path):
    report = run_sim(small_config())
    paths = report.write(str(tmp_path), prefix="t")
    assert len(paths) == 3
    for p in paths:
        assert (tmp_path / p.split("/")[-1]).exists()
    import json
    data = json.loads((tmp_path / "t_report.json").read_text())
    assert data["seed"] == 3
    header = (tmp_path / "t_chunk_latency_ecdf.csv").read_text().splitlines()[0]
    assert header == "value,cumulative_fraction"


# -- config validation ---------------------------------------------------

def test_validation_names_field_paths():
    with pytest.raises(ValidationError, match="workload.touched_chunks"):
        validate_config(small_config(
            workload=WorkloadSpec(functions=1, base_chunks=1, unique_chunks=0,
                                  touched_chunks=5, duration=1.0)))
    with pytest.raises(ValidationError, match="limiter.max_in_flight"):
        validate_config(small_config(limiter=LimiterSpec(enabled=True,
                                                         max_in_flight=0)))


def test_config_from_dict_roundtrip():
    raw = {
        "workload": {"functions": 2, "base_chunks": 3, "unique_chunks": 1,
                     "touched_chunks": 4, "arrival_rate": 5, "duration": 2.0,
                     "cron": {"period": 1.0, "burst_size": 2,
                              "chunks_per_function": 1}},
        "topology": {"workers": 1, "l2_nodes": 5, "warm_l2": True},
        "latency": {"l2": {"median": 0.001, "sigma": 0.4},
                    "slow_factors": {"node01": 10.0}},
        "limiter": {"enabled": True, "max_in_flight": 7},
        "seed": 9,
    }
    cfg = config_from_dict(raw)
    assert cfg.workload.cron.burst_size == 2
    assert cfg.topology.l2_nodes == 5
    assert cfg.latency.slow_factors == {"node01": 10.0}
    assert cfg.limiter.max_in_flight == 7
    assert cfg.seed == 9
    run_sim(cfg)  # executable as given


def test_config_unknown_field_named():
    with pytest.raises(ValidationError, match="workload.*typo_field"):
        config_from_dict({"workload": {"functions": 1, "base_chunks": 1,
                                       "unique_chunks": 0, "touched_chunks": 1,
                                       "typo_field": 3}})
    with pytest.raises(ValidationError, match="required"):
        config_from_dict({"workload": {"functions": 1}})
