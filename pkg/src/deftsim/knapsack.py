"""Knapsack solvers used by the communication scheduler.

Weights are integer microseconds of fast-link communication time and double
as profits (weight == value). All solvers are deterministic: ties prefer
lower bucket ids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DeftError

# Above this capacity the exact subset-sum DP switches to scaled weights
# (conservative rounding keeps every returned assignment feasible).
MAX_EXACT_CAPACITY = 10_000_000


@dataclass(frozen=True)
class Item:
    """One schedulable bucket communication."""

    bucket_id: int
    weight: int

    def __post_init__(self):
        if self.weight <= 0:
            raise DeftError(f"item {self.bucket_id}: weight must be > 0")


@dataclass(frozen=True)
class KnapsackAssignment:
    """Feasible placement of items into knapsacks.

    `selections[k]` lists the bucket ids placed into knapsack k (input
    order); `leftovers` lists the unplaced ids.
    """

    selections: tuple[tuple[int, ...], ...]
    total_value: int
    leftovers: tuple[int, ...]

    def selected_ids(self) -> set[int]:
        return {i for sel in self.selections for i in sel}


def _scaled_weights(weights: list[int], capacity: int) -> tuple[list[int], int]:
    """Scale weights so the DP bitset stays bounded; never over-packs."""
    if capacity <= MAX_EXACT_CAPACITY:
        return weights, capacity
    q = math.ceil(capacity / MAX_EXACT_CAPACITY)
    return [math.ceil(w / q) for w in weights], capacity // q


def naive_knapsack(items: list[Item], capacity: int) -> KnapsackAssignment:
    """Exact 0/1 knapsack with weight == value, via subset-sum bitsets.

    Among optimal subsets, the one including the lowest bucket ids first is
    returned.
    """
    if capacity < 0:
        raise DeftError("capacity must be >= 0")
    items = sorted(items, key=lambda it: it.bucket_id)
    if not items or capacity == 0:
        return KnapsackAssignment(
            selections=((),),
            total_value=0,
            leftovers=tuple(it.bucket_id for it in items),
        )
    weights, cap = _scaled_weights([it.weight for it in items], capacity)
    n = len(items)
    full = (1 << (cap + 1)) - 1
    # suffix[i]: bitset of sums reachable with items i..n-1
    suffix = [0] * (n + 1)
    suffix[n] = 1
    for i in range(n - 1, -1, -1):
        m = suffix[i + 1]
        suffix[i] = (m | (m << weights[i])) & full
    best = suffix[0].bit_length() - 1
    chosen, leftovers = [], []
    target = best
    for i, it in enumerate(items):
        w = weights[i]
        if w <= target and (suffix[i + 1] >> (target - w)) & 1:
            chosen.append(it.bucket_id)
            target -= w
        else:
            leftovers.append(it.bucket_id)
    by_id = {it.bucket_id: it.weight for it in items}
    return KnapsackAssignment(
        selections=(tuple(chosen),),
        total_value=sum(by_id[i] for i in chosen),
        leftovers=tuple(leftovers),
    )


def recursive_knapsack(
    items: list[Item], remain_time: int, backward_times: list[int]
) -> list[int]:
    """Drop-or-solve recursion over the newest-first bucket list.

    `items` is ordered newest bucket first (descending id in generation
    order) and `backward_times` is aligned with it. Each recursion level
    either solves a plain knapsack over the remaining list or drops the
    newest bucket, adjusting the capacity by the next bucket's backward
    time, and keeps whichever candidate communicates more.
    """
    if len(items) != len(backward_times):
        raise DeftError("items and backward_times must be aligned")
    n = len(items)

    def solve(i: int, remain: int) -> tuple[int, list[int]]:
        if i >= n:
            return 0, []
        asn = naive_knapsack(list(items[i:]), max(0, remain))
        picked = set(asn.selections[0])
        order1 = [it.bucket_id for it in items[i:] if it.bucket_id in picked]
        sum1 = asn.total_value
        if i + 1 < n:
            sum2, order2 = solve(i + 1, remain - backward_times[i + 1])
        else:
            sum2, order2 = 0, []
        if sum1 >= sum2:
            return sum1, order1
        return sum2, order2

    return solve(0, remain_time)[1]


def greedy_multi_knapsack(
    items: list[Item], capacities: list[int]
) -> KnapsackAssignment:
    """Greedy multi-knapsack: smallest knapsack first, longest items first."""
    if any(c < 0 for c in capacities):
        raise DeftError("capacities must be >= 0")
    order = sorted(range(len(capacities)), key=lambda k: (capacities[k], k))
    ranked = sorted(items, key=lambda it: (-it.weight, it.bucket_id))
    placed: dict[int, list[int]] = {k: [] for k in range(len(capacities))}
    placed_ids: set[int] = set()
    total = 0
    for k in order:
        room = capacities[k]
        for it in ranked:
            if it.bucket_id in placed_ids or it.weight > room:
                continue
            placed[k].append(it.bucket_id)
            placed_ids.add(it.bucket_id)
            room -= it.weight
            total += it.weight
    leftovers = tuple(
        it.bucket_id
        for it in sorted(items, key=lambda it: it.bucket_id)
        if it.bucket_id not in placed_ids
    )
    return KnapsackAssignment(
        selections=tuple(tuple(placed[k]) for k in range(len(capacities))),
        total_value=total,
        leftovers=leftovers,
    )


def brute_force_multi_knapsack(
    items: list[Item], capacities: list[int]
) -> KnapsackAssignment:
    """Exact multi-knapsack optimum by exhaustive assignment (test oracle)."""
    if len(items) > 20:
        raise DeftError("brute force guard: at most 20 items")
    if any(c < 0 for c in capacities):
        raise DeftError("capacities must be >= 0")
    n, m = len(items), len(capacities)
    items = sorted(items, key=lambda it: it.bucket_id)
    suffix_sum = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix_sum[i] = suffix_sum[i + 1] + items[i].weight

    best_value = -1
    best_assign: list[int] = []
    assign = [-1] * n

    def dfs(i: int, value: int, rooms: list[int]):
        nonlocal best_value, best_assign
        if value + suffix_sum[i] <= best_value:
            return
        if i == n:
            if value > best_value:
                best_value = value
                best_assign = assign.copy()
            return
        w = items[i].weight
        for k in range(m):
            if rooms[k] >= w:
                rooms[k] -= w
                assign[i] = k
                dfs(i + 1, value + w, rooms)
                rooms[k] += w
        assign[i] = -1
        dfs(i + 1, value, rooms)

    dfs(0, 0, list(capacities))

    sels: list[list[int]] = [[] for _ in range(m)]
    leftovers = []
    for i, it in enumerate(items):
        k = best_assign[i] if i < len(best_assign) else -1
        if k >= 0:
            sels[k].append(it.bucket_id)
        else:
            leftovers.append(it.bucket_id)
    return KnapsackAssignment(
        selections=tuple(tuple(s) for s in sels),
        total_value=max(best_value, 0),
        leftovers=tuple(leftovers),
    )
