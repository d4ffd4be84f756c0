"""Deterministic discrete-event simulation of schedule decision streams.

One compute stream executes forward then backward kernels back to back; each
link runs an independent communication stream. Planned communications are
released either at a stage boundary (previously accumulated gradients) or at
the owning bucket's backward completion (freshly generated gradients). A
link serves the released task that comes earliest in plan order, so a
high-priority transfer can overtake an earlier-planned one that is not ready
yet. Knapsack capacities are planning bounds only: transfers may spill past
their stage.

Schedulers that update every iteration stall the next forward pass of a
bucket until that bucket's gradient from the previous iteration has been
synchronized; the delayed-update scheduler never stalls compute.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ComparisonError, ScheduleMismatchError
from .profiles import ClusterSpec, LinkSpec, comm_time_on_link
from .scheduler import Schedule

EVENT_KINDS = ("forward_compute", "backward_compute", "comm_start", "comm_end", "update")


@dataclass(frozen=True)
class Event:
    kind: str
    bucket_id: int
    start_us: int
    end_us: int
    iteration: int
    link: str | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "bucket_id": self.bucket_id,
            "start_us": self.start_us,
            "end_us": self.end_us,
            "iteration": self.iteration,
            "link": self.link,
        }


@dataclass(frozen=True)
class SimConfig:
    affine_links: bool = False
    slow_link_copy_overhead_us: int = 0
    jitter: float = 0.0
    seed: int = 0


@dataclass
class SimReport:
    scheme: str
    profile_name: str
    iterations: int
    iteration_times_us: list[int]
    total_time_us: int
    bubble_time_us: int
    bubble_ratio: float
    updates_performed: int
    throughput_samples_per_s: float
    timeline: list[Event] = field(default_factory=list, repr=False)

    @property
    def mean_iteration_time_us(self) -> float:
        return self.total_time_us / self.iterations

    def summary_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "profile": self.profile_name,
            "iterations": self.iterations,
            "total_time_us": self.total_time_us,
            "mean_iteration_time_us": round(self.mean_iteration_time_us, 3),
            "bubble_time_us": self.bubble_time_us,
            "bubble_ratio": round(self.bubble_ratio, 6),
            "updates_performed": self.updates_performed,
            "throughput_samples_per_s": round(self.throughput_samples_per_s, 3),
        }

    def dump_timeline_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for e in self.timeline:
                f.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")


class _LinkQueue:
    """FIFO-by-plan-order link with not-before release times."""

    def __init__(self, link: LinkSpec):
        self.link = link
        self.tasks: list[tuple[int, int, int, int, int]] = []  # seq, release, dur, bucket, iter
        self.done: list[Event] = []
        self.comm_end_by_key: dict[tuple[int, int], int] = {}
        self._clock = 0

    def add(self, seq: int, release: int, dur: int, bucket_id: int, iteration: int):
        self.tasks.append((seq, release, dur, bucket_id, iteration))

    def drain(self):
        """Run every queued task; earliest plan order among released wins."""
        self.tasks.sort()
        while self.tasks:
            ready = [t for t in self.tasks if t[1] <= self._clock]
            if not ready:
                self._clock = min(t[1] for t in self.tasks)
                continue
            task = min(ready)
            self.tasks.remove(task)
            seq, release, dur, bucket_id, iteration = task
            start = self._clock
            end = start + dur
            self._clock = end
            self.done.append(Event(
                kind="comm_start", bucket_id=bucket_id, start_us=start,
                end_us=start, iteration=iteration, link=self.link.name,
            ))
            self.done.append(Event(
                kind="comm_end", bucket_id=bucket_id, start_us=start,
                end_us=end, iteration=iteration, link=self.link.name,
            ))
            self.comm_end_by_key[(iteration, bucket_id)] = end

    @property
    def last_end(self) -> int:
        return self._clock


def _comm_duration(bucket, link: LinkSpec, cfg: SimConfig, rng) -> int:
    if cfg.affine_links and link.bandwidth_bps:
        payload = round(1e6 * bucket.param_count * 4 / link.bandwidth_bps
                        * link.speed_ratio_to_fast)
    else:
        payload = comm_time_on_link(bucket, link)
    dur = link.startup_us + payload
    if not link.is_fast:
        dur += cfg.slow_link_copy_overhead_us
    if cfg.jitter > 0:
        dur = max(1, round(dur * (1.0 + rng.uniform(-cfg.jitter, cfg.jitter))))
    return dur


def simulate(schedule: Schedule, config: SimConfig | None = None) -> SimReport:
    """Execute a schedule's decision stream and measure the timeline."""
    cfg = config or SimConfig()
    rng = random.Random(cfg.seed)
    profile = schedule.profile
    links = {l.name: _LinkQueue(l) for l in schedule.cluster.links}
    known_ids = {b.id for b in profile.buckets}

    decisions_by_iter: dict[int, dict[str, object]] = {}
    for d in schedule.decisions:
        decisions_by_iter.setdefault(d.iteration, {})[d.stage] = d
        for plan in (d.forward_plan, d.backward_plan):
            for name, ids in plan.items():
                if name not in links:
                    raise ScheduleMismatchError(f"plan references unknown link {name!r}")
                bad = set(ids) - known_ids
                if bad:
                    raise ScheduleMismatchError(
                        f"plan references unknown buckets {sorted(bad)}"
                    )

    iterations = schedule.iterations
    fwd_order = [b.id for b in reversed(profile.buckets)]
    bwd_order = [b.id for b in profile.buckets]

    timeline: list[Event] = []
    compute_t = 0
    bubble = 0
    first_compute = None
    fwd_starts: list[int] = []
    seq = 0
    update_count = 0
    prev_iter_comm: dict[int, tuple[int, str]] = {}  # bucket -> (iteration, link)

    def release_plan(decision, when: int, bwd_ends: dict[int, int] | None):
        nonlocal seq
        fresh = decision.fresh_ids
        for name, ids in decision.plan().items():
            for bucket_id in ids:
                b = profile.bucket(bucket_id)
                dur = _comm_duration(b, links[name].link, cfg, rng)
                release = when
                if bwd_ends is not None and bucket_id in fresh:
                    release = bwd_ends[bucket_id]
                links[name].add(seq, release, dur, bucket_id, decision.iteration)
                prev_iter_comm[bucket_id] = (decision.iteration, name)
                seq += 1

    for k in range(iterations):
        stages = decisions_by_iter.get(k, {})
        fdec, bdec = stages.get("forward"), stages.get("backward")

        # ---- forward stage
        fwd_stage_start = compute_t
        if fdec is not None:
            release_plan(fdec, fwd_stage_start, None)
        started = False
        for j in fwd_order:
            dep = 0
            if not schedule.delayed_updates and k > 0:
                rec = prev_iter_comm.get(j)
                if rec is not None and rec[0] == k - 1:
                    it_, name = rec
                    dep = links[name].comm_end_by_key.get((it_, j), 0)
            start = max(compute_t, dep)
            if first_compute is None and not started:
                first_compute = start
            if start > compute_t and first_compute is not None and (started or k > 0):
                bubble += start - compute_t
            if not started:
                fwd_starts.append(start)
                started = True
            f = profile.bucket(j).forward_us
            timeline.append(Event("forward_compute", j, start, start + f, k))
            compute_t = start + f

        # ---- backward stage
        bwd_stage_start = compute_t
        bwd_ends: dict[int, int] = {}
        for j in bwd_order:
            b = profile.bucket(j).backward_us
            timeline.append(Event("backward_compute", j, compute_t, compute_t + b, k))
            compute_t += b
            bwd_ends[j] = compute_t
        if bdec is not None:
            release_plan(bdec, bwd_stage_start, bwd_ends)
        for lq in links.values():
            lq.drain()
        if bdec is not None and bdec.update_events:
            outstanding = max(lq.last_end for lq in links.values()) if links else compute_t
            t_up = max(compute_t, outstanding)
            for ev in bdec.update_events:
                update_count += 1
                timeline.append(Event("update", 0, t_up, t_up, k))

    for lq in links.values():
        lq.drain()
        timeline.extend(lq.done)

    last_compute = compute_t
    total_end = max([last_compute] + [lq.last_end for lq in links.values()])
    iteration_times = [
        fwd_starts[i + 1] - fwd_starts[i] for i in range(len(fwd_starts) - 1)
    ]
    iteration_times.append(total_end - fwd_starts[-1])

    span = last_compute - (first_compute or 0)
    bubble_ratio = bubble / span if span > 0 else 0.0
    total_s = total_end / 1e6
    throughput = (iterations * profile.batch_size / total_s) if total_s > 0 else 0.0

    timeline.sort(key=lambda e: (e.start_us, e.end_us, e.kind, e.link or "", e.bucket_id))
    return SimReport(
        scheme=schedule.scheme,
        profile_name=profile.name,
        iterations=iterations,
        iteration_times_us=iteration_times,
        total_time_us=total_end,
        bubble_time_us=bubble,
        bubble_ratio=bubble_ratio,
        updates_performed=update_count,
        throughput_samples_per_s=throughput,
        timeline=timeline,
    )


def compare(reports: dict[str, SimReport], baseline: str = "wfbp") -> dict:
    """Speedups of every scheme against a named baseline."""
    if not reports:
        raise ComparisonError("no reports to compare")
    names = set(r.profile_name for r in reports.values())
    iters = set(r.iterations for r in reports.values())
    if len(iters) != 1:
        raise ComparisonError(f"iteration counts differ: {sorted(iters)}")
    if baseline not in reports:
        raise ComparisonError(f"baseline {baseline!r} missing from reports")
    base = reports[baseline].total_time_us
    rows = []
    for scheme in sorted(reports):
        r = reports[scheme]
        rows.append({
            "scheme": scheme,
            "profile": r.profile_name,
            "total_time_us": r.total_time_us,
            "mean_iteration_time_us": round(r.mean_iteration_time_us, 3),
            "bubble_ratio": round(r.bubble_ratio, 6),
            "updates_performed": r.updates_performed,
            "speedup_vs_" + baseline: round(base / r.total_time_us, 4)
            if r.total_time_us else 0.0,
        })
    return {"baseline": baseline, "profiles": sorted(names), "rows": rows}


def export_chrome_trace(report: SimReport, path: str | Path) -> None:
    """Write the timeline in the Chrome trace-event JSON format."""
    tids = {"compute": 0}
    events = []
    for e in report.timeline:
        if e.kind in ("forward_compute", "backward_compute"):
            tid = tids["compute"]
            name = f"{e.kind}:b{e.bucket_id}"
        elif e.kind == "comm_end":
            tid = tids.setdefault(f"link:{e.link}", len(tids))
            name = f"comm:b{e.bucket_id}"
        elif e.kind == "update":
            events.append({
                "name": "update", "ph": "i", "ts": e.start_us, "pid": 0,
                "tid": tids["compute"], "s": "g",
            })
            continue
        else:
            continue
        events.append({
            "name": name, "ph": "X", "ts": e.start_us,
            "dur": e.end_us - e.start_us, "pid": 0, "tid": tid,
            "args": {"iteration": e.iteration},
        })
    Path(path).write_text(json.dumps({"traceEvents": events}, sort_keys=True))
