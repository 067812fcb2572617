"""Cache sizing calculator.

Break-even sizing follows the five-minute-rule argument: an object is
worth keeping cached while the cost of retaining its bytes stays below
the cost of re-fetching it from the origin, which yields a break-even
reuse interval; objects observed to recur faster than that earn their
slot. The hit-rate goal size comes from an LRU stack-distance analysis of
the same trace. The recommended size is the larger of the two -- the
cache must both pay for itself and meet the latency goal.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

from chunkvault.stats import mean


@dataclass(frozen=True)
class SizingInputs:
    cost_per_byte_retained_per_sec: float
    cost_per_origin_fetch: float
    object_size: int


@dataclass(frozen=True)
class SizingReport:
    break_even_interval: float
    break_even_size: int
    hit_rate_goal: float
    achievable_hit_rate: float
    hit_rate_goal_size: int
    recommended_size: int


def break_even_interval(inputs: SizingInputs) -> float:
    """Seconds an object is worth retaining before re-fetching is cheaper."""
    retain_rate = inputs.object_size * inputs.cost_per_byte_retained_per_sec
    if retain_rate <= 0:
        raise ValueError("retention cost must be positive")
    return inputs.cost_per_origin_fetch / retain_rate


def break_even_size(trace: list[tuple[float, str]], inputs: SizingInputs) -> int:
    """Bytes needed for every object whose mean reuse interval beats the
    break-even interval."""
    threshold = break_even_interval(inputs)
    last_seen: dict[str, float] = {}
    intervals: dict[str, list[float]] = defaultdict(list)
    for t, name in trace:
        if name in last_seen:
            intervals[name].append(t - last_seen[name])
        last_seen[name] = t
    worth_keeping = sum(1 for name, gaps in intervals.items()
                        if mean(gaps) <= threshold)
    return worth_keeping * inputs.object_size


def lru_stack_distances(trace: list[tuple[float, str]]) -> list[int | None]:
    """Mattson stack distance per access (None for cold misses)."""
    stack: list[str] = []
    out: list[int | None] = []
    for _, name in trace:
        try:
            depth = stack.index(name)
        except ValueError:
            out.append(None)
        else:
            out.append(depth + 1)
            del stack[depth]
        stack.insert(0, name)
    return out


def size_for_hit_rate(trace: list[tuple[float, str]], inputs: SizingInputs,
                      goal: float) -> tuple[int, float]:
    """Smallest LRU capacity (bytes) meeting the hit-rate goal on the trace.

    Returns (size, achievable_rate); when even an unbounded cache cannot
    meet the goal (cold misses dominate), size covers all distinct objects
    and achievable_rate reports the ceiling.
    """
    distances = lru_stack_distances(trace)
    total = len(distances)
    if total == 0:
        return 0, 0.0
    finite = sorted(d for d in distances if d is not None)
    ceiling = len(finite) / total
    distinct = len({name for _, name in trace})
    if ceiling < goal:
        return distinct * inputs.object_size, ceiling
    hits_needed = goal * total
    hits = 0
    for i, d in enumerate(finite):
        hits = i + 1
        if hits >= hits_needed:
            return d * inputs.object_size, hits / total
    return distinct * inputs.object_size, ceiling


def recommend_size(trace: list[tuple[float, str]], inputs: SizingInputs,
                   hit_rate_goal: float) -> SizingReport:
    be_size = break_even_size(trace, inputs)
    hr_size, achievable = size_for_hit_rate(trace, inputs, hit_rate_goal)
    return SizingReport(
        break_even_interval=break_even_interval(inputs),
        break_even_size=be_size,
        hit_rate_goal=hit_rate_goal,
        achievable_hit_rate=achievable,
        hit_rate_goal_size=hr_size,
        recommended_size=max(be_size, hr_size))
