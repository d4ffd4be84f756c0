"""Communication schedulers: the delayed-update two-queue state machine and
the plain-overlap, priority, and non-sequential baselines.

The delayed-update scheduler keeps two queues. The current task queue holds
leftover bucket communications from finished iterations; the future task
queue accumulates complete iterations' gradients, merging them (one
synchronization for several iterations) when backlog builds up. Every stage
boundary packs communications into per-link knapsacks whose capacities are
the stage's total compute time (fast link) and the speed ratio times that
(slow link). A parameter update is reported the moment every bucket of a
merged gradient group has been scheduled.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace

from .errors import InternalInvariantError
from .knapsack import Item, greedy_multi_knapsack, recursive_knapsack
from .partition import PartitionConfig, fuse_buckets, partition_buckets, partition_by_size
from .profiles import ClusterSpec, LinkSpec, ModelProfile

SCHEMES = ("wfbp", "priority", "nonsequential", "deft", "deft_single_link")


class Case(enum.Enum):
    CASE1 = 1
    CASE2 = 2
    CASE3 = 3
    CASE4 = 4


@dataclass
class PendingBucket:
    bucket_id: int
    merge_count: int
    origin_iteration: int


@dataclass
class QueueState:
    current_queue: list[PendingBucket] = field(default_factory=list)
    future_queue: list[PendingBucket] = field(default_factory=list)

    def check(self):
        # a bucket id may appear in both queues at once (an old leftover
        # generation plus a newly accumulated one) but never twice in the
        # same queue
        for q, name in ((self.current_queue, "current"), (self.future_queue, "future")):
            ids = [pb.bucket_id for pb in q]
            if len(ids) != len(set(ids)):
                raise InternalInvariantError(f"duplicate bucket in {name} queue")


@dataclass(frozen=True)
class UpdateEvent:
    """One parameter update: a gradient group became fully synchronized."""

    origins: tuple[int, ...]
    merge_count: int


@dataclass(frozen=True)
class ScheduleDecision:
    iteration: int
    stage: str  # "forward" | "backward"
    forward_plan: dict[str, tuple[int, ...]]
    backward_plan: dict[str, tuple[int, ...]]
    fresh_ids: frozenset[int]
    merged: tuple[int, ...]
    update_events: tuple[UpdateEvent, ...]
    case_taken: Case | None

    @property
    def update_performed(self) -> bool:
        return bool(self.update_events)

    def plan(self) -> dict[str, tuple[int, ...]]:
        return self.forward_plan if self.stage == "forward" else self.backward_plan

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "stage": self.stage,
            "forward_plan": {k: list(v) for k, v in self.forward_plan.items()},
            "backward_plan": {k: list(v) for k, v in self.backward_plan.items()},
            "fresh_ids": sorted(self.fresh_ids),
            "merged": list(self.merged),
            "update_events": [
                {"origins": list(u.origins), "merge_count": u.merge_count}
                for u in self.update_events
            ],
            "update_performed": self.update_performed,
            "case_taken": self.case_taken.name if self.case_taken else None,
        }


@dataclass(frozen=True)
class CapacityModel:
    forward_capacity_us: int
    backward_capacity_us: int
    capacity_multiplier: float
    link_ratios: tuple[float, ...]  # aligned with the cluster's link order

    def __post_init__(self):
        if self.capacity_multiplier < 1.0:
            raise InternalInvariantError("capacity multiplier must be >= 1")

    @classmethod
    def from_profile(
        cls, profile: ModelProfile, cluster: ClusterSpec, multiplier: float = 1.0
    ) -> "CapacityModel":
        return cls(
            forward_capacity_us=profile.total_forward_us,
            backward_capacity_us=profile.total_backward_us,
            capacity_multiplier=multiplier,
            link_ratios=tuple(l.speed_ratio_to_fast for l in cluster.links),
        )

    def stage_capacities(self, stage: str) -> list[int]:
        base = (
            self.forward_capacity_us if stage == "forward" else self.backward_capacity_us
        )
        return [round(r * base * self.capacity_multiplier) for r in self.link_ratios]

    def stage_total(self, stage: str) -> int:
        return sum(self.stage_capacities(stage))


@dataclass
class Schedule:
    """A decision stream bound to the profile it was planned against."""

    scheme: str
    profile: ModelProfile
    cluster: ClusterSpec
    decisions: list[ScheduleDecision]
    delayed_updates: bool
    iterations: int

    def dump_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for d in self.decisions:
                f.write(json.dumps(d.to_dict(), sort_keys=True) + "\n")


class _Group:
    """Tracks one gradient group (possibly merged iterations) to completion."""

    __slots__ = ("origins", "merge_count", "remaining")

    def __init__(self, origins, merge_count, remaining_ids):
        self.origins = tuple(origins)
        self.merge_count = merge_count
        self.remaining = set(remaining_ids)


class DeftScheduler:
    """Two-queue delayed-update scheduler over a fixed bucket profile."""

    def __init__(
        self,
        profile: ModelProfile,
        cluster: ClusterSpec,
        capacity_multiplier: float = 1.0,
    ):
        self.profile = profile
        self.cluster = cluster
        self.caps = CapacityModel.from_profile(profile, cluster, capacity_multiplier)
        self.state = QueueState()
        self._current_group: _Group | None = None
        self._future_origins: tuple[int, ...] = ()
        self._pending_updates: list[_Group] = []

    # -- helpers ---------------------------------------------------------

    def _comm(self, bucket_id: int) -> int:
        return self.profile.bucket(bucket_id).comm_fast_us

    def _items(self, bucket_ids) -> list[Item]:
        return [Item(i, self._comm(i)) for i in bucket_ids]

    def _link_names(self) -> list[str]:
        return [l.name for l in self.cluster.links]

    def _place_forced(self, plan, loads, caps, bucket_ids):
        """Place every bucket, preferring the link with most remaining room."""
        for i in sorted(bucket_ids, key=lambda b: (-self._comm(b), b)):
            k = max(range(len(caps)), key=lambda j: (caps[j] - loads[j], -j))
            plan[k].append(i)
            loads[k] += self._comm(i)

    def _place_within(self, plan, loads, caps, bucket_ids):
        """Place buckets in order, on the roomiest link that still fits.

        Falls back to forced placement for an id nothing can hold; the
        capacities are planning bounds, not hard cutoffs.
        """
        for i in bucket_ids:
            w = self._comm(i)
            fitting = [j for j in range(len(caps)) if caps[j] - loads[j] >= w]
            if fitting:
                k = max(fitting, key=lambda j: (caps[j] - loads[j], -j))
            else:
                k = max(range(len(caps)), key=lambda j: (caps[j] - loads[j], -j))
            plan[k].append(i)
            loads[k] += w

    def _drop_from_current(self, bucket_ids):
        taken = set(bucket_ids)
        self.state.current_queue = [
            pb for pb in self.state.current_queue if pb.bucket_id not in taken
        ]
        if self._current_group is not None:
            self._current_group.remaining -= taken
            if not self._current_group.remaining:
                self._pending_updates.append(self._current_group)
                self._current_group = None
                if self.state.current_queue:
                    raise InternalInvariantError("group drained but queue not empty")

    def _store_or_merge_new(self, iteration: int) -> tuple[int, ...]:
        """New gradients enter the future queue; returns the merged ids."""
        all_ids = [b.id for b in self.profile.buckets]
        if self.state.future_queue:
            for pb in self.state.future_queue:
                pb.merge_count += 1
            self._future_origins = self._future_origins + (iteration,)
            return tuple(all_ids)
        self.state.future_queue = [PendingBucket(i, 1, iteration) for i in all_ids]
        self._future_origins = (iteration,)
        return ()

    def _flush_updates(self) -> tuple[UpdateEvent, ...]:
        events = tuple(
            UpdateEvent(origins=g.origins, merge_count=g.merge_count)
            for g in self._pending_updates
        )
        self._pending_updates = []
        return events

    # -- stages ----------------------------------------------------------

    def schedule_forward(self, iteration: int) -> ScheduleDecision:
        """Pack leftover communications into the forward-stage knapsacks."""
        self.state.check()
        caps = self.caps.stage_capacities("forward")
        names = self._link_names()
        ids = [pb.bucket_id for pb in self.state.current_queue]
        asn = greedy_multi_knapsack(self._items(ids), caps)
        self._drop_from_current(asn.selected_ids())
        return ScheduleDecision(
            iteration=iteration,
            stage="forward",
            forward_plan={n: sel for n, sel in zip(names, asn.selections)},
            backward_plan={},
            fresh_ids=frozenset(),
            merged=(),
            update_events=(),
            case_taken=Case.CASE1,
        )

    def schedule_backward(self, iteration: int) -> ScheduleDecision:
        """Dispatch on the queue state and plan the backward-stage slots."""
        self.state.check()
        caps = self.caps.stage_capacities("backward")
        names = self._link_names()
        dual = sum(caps)
        plan: list[list[int]] = [[] for _ in caps]
        loads = [0] * len(caps)
        fresh: set[int] = set()
        merged: tuple[int, ...] = ()

        current_ids = [pb.bucket_id for pb in self.state.current_queue]
        remaining_w = sum(self._comm(i) for i in current_ids)

        if current_ids and remaining_w > dual:
            case = Case.CASE2
            asn = greedy_multi_knapsack(self._items(current_ids), caps)
            for k, sel in enumerate(asn.selections):
                plan[k].extend(sel)
                loads[k] += sum(self._comm(i) for i in sel)
            self._drop_from_current(asn.selected_ids())
            if self._current_group is None:
                raise InternalInvariantError("insufficient capacity yet queue drained")
            merged = self._store_or_merge_new(iteration)
        elif current_ids:
            case = Case.CASE3
            self._place_forced(plan, loads, caps, current_ids)
            self._drop_from_current(current_ids)
            merged = self._store_or_merge_new(iteration)
            self._select_from_future(
                iteration, max(0, dual - remaining_w), plan, loads, caps, fresh
            )
        else:
            case = Case.CASE4
            merged = self._store_or_merge_new(iteration)
            self._select_from_future(iteration, dual, plan, loads, caps, fresh)

        return ScheduleDecision(
            iteration=iteration,
            stage="backward",
            forward_plan={},
            backward_plan={n: tuple(p) for n, p in zip(names, plan)},
            fresh_ids=frozenset(fresh),
            merged=merged,
            update_events=self._flush_updates(),
            case_taken=case,
        )

    def _select_from_future(self, iteration, remain, plan, loads, caps, fresh):
        """Recursion over the (merged) future set; leftovers refill current."""
        future = self.state.future_queue
        if not future:
            return
        merge_count = future[0].merge_count
        origins = self._future_origins
        ids_desc = sorted((pb.bucket_id for pb in future), reverse=True)
        items = self._items(ids_desc)
        backward_times = [self.profile.bucket(i).backward_us for i in ids_desc]
        order = recursive_knapsack(items, remain, backward_times)
        self._place_within(plan, loads, caps, order)
        fresh.update(order)
        leftovers = [i for i in ids_desc if i not in set(order)]
        group = _Group(origins, merge_count, leftovers)
        self.state.future_queue = []
        self._future_origins = ()
        if leftovers:
            self.state.current_queue = [
                PendingBucket(i, merge_count, origins[0]) for i in sorted(leftovers)
            ]
            self._current_group = group
        else:
            self._pending_updates.append(group)

    def run(self, iterations: int) -> list[ScheduleDecision]:
        out = []
        for k in range(iterations):
            out.append(self.schedule_forward(k))
            out.append(self.schedule_backward(k))
        return out


def deft_schedule_forward(state_holder: "DeftScheduler", iteration: int = 0):
    return state_holder.schedule_forward(iteration)


def deft_schedule_backward(state_holder: "DeftScheduler", iteration: int = 0):
    return state_holder.schedule_backward(iteration)


def effective_update_frequency(decisions: list[ScheduleDecision], window: int) -> float:
    """Parameter updates per iteration over a window of iterations."""
    if window < 1:
        raise InternalInvariantError("window must be >= 1")
    return sum(len(d.update_events) for d in decisions) / window


# -- baselines -----------------------------------------------------------


def _every_iteration_decisions(
    profile: ModelProfile, fast: LinkSpec, order: list[int], iterations: int
) -> list[ScheduleDecision]:
    all_ids = frozenset(b.id for b in profile.buckets)
    out = []
    for k in range(iterations):
        out.append(ScheduleDecision(
            iteration=k, stage="forward", forward_plan={}, backward_plan={},
            fresh_ids=frozenset(), merged=(), update_events=(), case_taken=None,
        ))
        out.append(ScheduleDecision(
            iteration=k,
            stage="backward",
            forward_plan={},
            backward_plan={fast.name: tuple(order)},
            fresh_ids=all_ids,
            merged=(),
            update_events=(UpdateEvent(origins=(k,), merge_count=1),),
            case_taken=None,
        ))
    return out


def baseline_wfbp(
    profile: ModelProfile, cluster: ClusterSpec, iterations: int
) -> Schedule:
    """Communicate each bucket as soon as its backward pass finishes."""
    order = [b.id for b in profile.buckets]
    return Schedule(
        scheme="wfbp",
        profile=profile,
        cluster=cluster,
        decisions=_every_iteration_decisions(profile, cluster.fast_link, order, iterations),
        delayed_updates=False,
        iterations=iterations,
    )


def baseline_priority(
    profile: ModelProfile,
    cluster: ClusterSpec,
    partition_cfg: PartitionConfig,
    iterations: int,
) -> Schedule:
    """Partitioned blocks sent input-layer-first so the next forward pass
    can start as early as possible."""
    part = partition_by_size(profile, partition_cfg.partition_size)
    order = [b.id for b in reversed(part.buckets)]
    return Schedule(
        scheme="priority",
        profile=part,
        cluster=cluster,
        decisions=_every_iteration_decisions(part, cluster.fast_link, order, iterations),
        delayed_updates=False,
        iterations=iterations,
    )


def baseline_nonsequential(
    profile: ModelProfile,
    cluster: ClusterSpec,
    partition_cfg: PartitionConfig,
    iterations: int,
) -> Schedule:
    """Greedy search over block structures and communication orders.

    Builds candidate plans — partitioned or unequal-size fused blocks,
    ordered input-layer-first or by descending communication time — scores
    each with a short simulation, and keeps the fastest. The
    input-layer-first partitioned candidate is always in the pool, so this
    scheme never schedules worse than the priority baseline.
    """
    part = partition_by_size(profile, partition_cfg.partition_size)
    fused = fuse_buckets(
        part, partition_cfg.comm_startup_us, replace(partition_cfg, mu=1.0)
    )

    def desc_comm(p: ModelProfile) -> list[int]:
        return [b.id for b in sorted(p.buckets, key=lambda b: (-b.comm_fast_us, b.id))]

    def input_first(p: ModelProfile) -> list[int]:
        return [b.id for b in reversed(p.buckets)]

    candidates = [
        (part, desc_comm(part)),
        (fused, desc_comm(fused)),
        (fused, input_first(fused)),
        (part, input_first(part)),
    ]

    def make(p: ModelProfile, order: list[int], n_iter: int) -> Schedule:
        return Schedule(
            scheme="nonsequential",
            profile=p,
            cluster=cluster,
            decisions=_every_iteration_decisions(p, cluster.fast_link, order, n_iter),
            delayed_updates=False,
            iterations=n_iter,
        )

    from .simulator import simulate  # deferred: simulator imports this module

    probe_iters = min(iterations, 8)
    scored = [
        (simulate(make(p, order, probe_iters)).total_time_us, i)
        for i, (p, order) in enumerate(candidates)
    ]
    _, best = min(scored)
    p, order = candidates[best]
    return make(p, order, iterations)


def deft_schedule(
    profile: ModelProfile,
    cluster: ClusterSpec,
    partition_cfg: PartitionConfig,
    iterations: int,
    capacity_multiplier: float = 1.0,
    single_link: bool = False,
) -> Schedule:
    """Partition, then run the delayed-update state machine."""
    part = partition_buckets(profile, partition_cfg)
    if partition_cfg.enable_fusion:
        part = fuse_buckets(part, partition_cfg.comm_startup_us, partition_cfg)
    links = cluster
    if single_link:
        links = ClusterSpec(links=(cluster.fast_link,))
    sched = DeftScheduler(part, links, capacity_multiplier)
    return Schedule(
        scheme="deft_single_link" if single_link else "deft",
        profile=part,
        cluster=links,
        decisions=sched.run(iterations),
        delayed_updates=True,
        iterations=iterations,
    )


def build_schedule(
    scheme: str,
    profile: ModelProfile,
    cluster: ClusterSpec,
    partition_cfg: PartitionConfig,
    iterations: int,
    capacity_multiplier: float = 1.0,
) -> Schedule:
    if scheme == "wfbp":
        return baseline_wfbp(profile, cluster, iterations)
    if scheme == "priority":
        return baseline_priority(profile, cluster, partition_cfg, iterations)
    if scheme == "nonsequential":
        return baseline_nonsequential(profile, cluster, partition_cfg, iterations)
    if scheme == "deft":
        return deft_schedule(
            profile, cluster, partition_cfg, iterations, capacity_multiplier
        )
    if scheme == "deft_single_link":
        return deft_schedule(
            profile, cluster, partition_cfg, iterations, capacity_multiplier,
            single_link=True,
        )
    raise ValueError(f"unknown scheme {scheme!r}")
