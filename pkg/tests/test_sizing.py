"""Five-minute-rule sizing calculator on constructed traces."""

import pytest

from chunkvault.cache.sizing import (SizingInputs, break_even_interval,
                                     break_even_size, lru_stack_distances,
                                     recommend_size, size_for_hit_rate)

INPUTS = SizingInputs(cost_per_byte_retained_per_sec=1e-9,
                      cost_per_origin_fetch=1e-4,
                      object_size=1000)
# break-even interval = 1e-4 / (1000 * 1e-9) = 100 seconds


def test_break_even_interval():
    assert break_even_interval(INPUTS) == pytest.approx(100.0)


def test_break_even_size_counts_fast_recurrers():
    trace = []
    for t in range(0, 1000, 10):       # "fast": reuse every 10s
        trace.append((float(t), "fast"))
    for t in range(0, 2000, 500):      # "slow": reuse every 500s
        trace.append((float(t), "slow"))
    trace.sort()
    assert break_even_size(trace, INPUTS) == 1000  # only "fast" qualifies


def test_stack_distances():
    trace = [(0.0, "a"), (1.0, "b"), (2.0, "a"), (3.0, "a"), (4.0, "b")]
    assert lru_stack_distances(trace) == [None, None, 2, 1, 2]


def test_size_for_hit_rate():
    # two objects alternating: every non-cold access has stack distance 2
    trace = [(float(t), "ab"[t % 2]) for t in range(20)]
    size, rate = size_for_hit_rate(trace, INPUTS, goal=0.5)
    assert size == 2 * INPUTS.object_size
    assert rate >= 0.5


def test_unreachable_goal_reports_ceiling():
    trace = [(float(t), f"one-shot{t}") for t in range(10)]
    size, rate = size_for_hit_rate(trace, INPUTS, goal=0.9)
    assert rate == 0.0
    assert size == 10 * INPUTS.object_size


def test_recommend_takes_max():
    trace = [(float(t), "ab"[t % 2]) for t in range(0, 2000, 50)]
    report = recommend_size(trace, INPUTS, hit_rate_goal=0.9)
    assert report.recommended_size == max(report.break_even_size,
                                          report.hit_rate_goal_size)
    assert report.break_even_interval == pytest.approx(100.0)
