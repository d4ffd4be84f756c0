"""Operator-level traces and their reduction to bucket-level profiles.

The trace schema is a plain JSON document:

    {"events": [{"name", "thread", "external_id", "start_us", "end_us",
                 "kind"}, ...],
     "iteration_boundaries_us": [...],
     "metadata": {...}}            # optional

Correlation works through external ids: a bucket's communication event
shares an id with the last backward-thread operator of that bucket, which in
turn sits next to the launch operator of the bucket's final compute kernel.
The first forward-thread operator of the bucket shares the communication id
as well, which pins down the forward-stage boundaries. Reconstruction walks
these chains bucket by bucket; it never looks at event names except for the
parameter-count annotation on communication events.
"""
from __future__ import annotations

import json
import re
import statistics
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .errors import MalformedTraceError, ReconstructionError, SchemaError
from .profiles import BucketProfile, ModelProfile

THREADS = ("forward", "backward", "compute_stream", "comm_stream")
KINDS = ("compute_launch", "kernel", "communication")

_PARAM_RE = re.compile(r"params_(\d+)")


@dataclass(frozen=True)
class OperatorEvent:
    name: str
    thread: str
    external_id: int
    start_us: int
    end_us: int
    kind: str

    def __post_init__(self):
        if self.thread not in THREADS:
            raise SchemaError(f"unknown thread {self.thread!r}")
        if self.kind not in KINDS:
            raise SchemaError(f"unknown event kind {self.kind!r}")
        if self.end_us < self.start_us:
            raise MalformedTraceError(
                f"event {self.name!r}: end {self.end_us} before start {self.start_us}"
            )


@dataclass(frozen=True)
class OperatorTrace:
    events: tuple[OperatorEvent, ...]
    iteration_boundaries_us: tuple[int, ...]
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def n_iterations(self) -> int:
        return max(0, len(self.iteration_boundaries_us) - 1)


def emit_trace(profile: ModelProfile, iterations: int = 1) -> OperatorTrace:
    """Generate a plain-overlap (communicate-on-ready) trace for `profile`.

    The inverse of `reconstruct_buckets`: reconstructing the emitted trace
    recovers the profile exactly.
    """
    if iterations < 1:
        raise SchemaError("iterations must be >= 1")
    n = profile.n_buckets
    events: list[OperatorEvent] = []
    boundaries = [0]
    t0 = 0
    for it in range(iterations):
        eid = lambda j, role: (it * n + (j - 1)) * 3 + role  # noqa: E731
        # forward stage runs input-side buckets first: ids n..1
        t = t0
        for j in range(n, 0, -1):
            b = profile.bucket(j)
            fs, fe = t, t + b.forward_us
            events.append(OperatorEvent(
                "fwd_begin", "forward", eid(j, 1), fs, fs, "compute_launch"))
            events.append(OperatorEvent(
                "fwd_launch", "forward", eid(j, 3), fs, fs, "compute_launch"))
            events.append(OperatorEvent(
                f"fwd_kernel_b{j}", "compute_stream", eid(j, 3), fs, fe, "kernel"))
            t = fe
        # backward stage: ids 1..n, communication launched as each finishes
        comm_t = None
        for j in range(1, n + 1):
            b = profile.bucket(j)
            bs, be = t, t + b.backward_us
            events.append(OperatorEvent(
                "bwd_launch", "backward", eid(j, 2), bs, bs, "compute_launch"))
            events.append(OperatorEvent(
                f"bwd_kernel_b{j}", "compute_stream", eid(j, 2), bs, be, "kernel"))
            events.append(OperatorEvent(
                "bwd_done", "backward", eid(j, 1), be, be, "compute_launch"))
            cs = be if comm_t is None else max(be, comm_t)
            ce = cs + b.comm_fast_us
            events.append(OperatorEvent(
                f"allreduce_params_{b.param_count}", "comm_stream",
                eid(j, 1), cs, ce, "communication"))
            comm_t = ce
            t = be
        t0 = max(t, comm_t if comm_t is not None else t)
        boundaries.append(t0)
    return OperatorTrace(
        events=tuple(events),
        iteration_boundaries_us=tuple(boundaries),
        metadata={
            "name": profile.name,
            "batch_size": profile.batch_size,
            "learning_rate": profile.learning_rate,
        },
    )


def _check_stream_exclusive(events: list[OperatorEvent], stream: str):
    spans = sorted(
        ((e.start_us, e.end_us) for e in events if e.thread == stream),
    )
    for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
        if s2 < e1:
            raise MalformedTraceError(
                f"overlapping events on {stream}: [{s1},{e1}) and [{s2},{e2})"
            )


def reconstruct_buckets(trace: OperatorTrace, n_buckets: int) -> ModelProfile:
    """Rebuild the bucket-level profile from an operator trace.

    Per iteration: each communication event's external id leads to the last
    backward operator of its bucket; the operator just before it launched the
    bucket's final compute kernel, fixing the backward endpoint; the shared
    id on the forward thread fixes the forward-stage boundaries, with the
    first bucket of the forward pass anchored at the iteration boundary.
    Per-bucket times are the medians across iterations.
    """
    if n_buckets < 1:
        raise ReconstructionError("n_buckets must be >= 1")
    if trace.n_iterations < 1:
        raise ReconstructionError("trace does not cover a complete iteration")
    _check_stream_exclusive(list(trace.events), "compute_stream")

    bounds = trace.iteration_boundaries_us
    per_iter_f = {j: [] for j in range(1, n_buckets + 1)}
    per_iter_b = {j: [] for j in range(1, n_buckets + 1)}
    per_iter_c = {j: [] for j in range(1, n_buckets + 1)}
    params = {j: 1 for j in range(1, n_buckets + 1)}

    for it in range(trace.n_iterations):
        lo, hi = bounds[it], bounds[it + 1]
        ev = [e for e in trace.events if lo <= e.start_us < hi or
              (e.start_us == e.end_us == lo)]
        comms = sorted(
            (e for e in ev if e.kind == "communication"),
            key=lambda e: (e.start_us, e.external_id),
        )
        if len(comms) != n_buckets:
            raise ReconstructionError(
                f"iteration {it}: expected {n_buckets} communication events, "
                f"found {len(comms)}"
            )
        bwd_ops = sorted(
            ((i, e) for i, e in enumerate(trace.events)
             if e.thread == "backward" and lo <= e.start_us < hi),
            key=lambda p: (p[1].start_us, p[0]),
        )
        fwd_ops = sorted(
            ((i, e) for i, e in enumerate(trace.events)
             if e.thread == "forward" and lo <= e.start_us < hi),
            key=lambda p: (p[1].start_us, p[0]),
        )
        kernels = {}
        for e in ev:
            if e.thread == "compute_stream" and e.kind == "kernel":
                kernels[e.external_id] = e

        for bucket_no, comm in enumerate(comms, start=1):
            m = _PARAM_RE.search(comm.name)
            if m:
                params[bucket_no] = int(m.group(1))
            # step 1: communication id -> last backward operator
            last_idx = next(
                (k for k, (_, e) in enumerate(bwd_ops)
                 if e.external_id == comm.external_id),
                None,
            )
            if last_idx is None:
                raise ReconstructionError(
                    f"iteration {it}: no backward operator matches the "
                    f"communication of bucket {bucket_no}",
                    bucket_id=bucket_no,
                )
            # step 2: the operator just before it launched the bucket's
            # final compute kernel
            if last_idx == 0:
                raise ReconstructionError(
                    f"iteration {it}: bucket {bucket_no} has no kernel-launch "
                    "operator before its last backward operator",
                    bucket_id=bucket_no,
                )
            launch = bwd_ops[last_idx - 1][1]
            kern = kernels.get(launch.external_id)
            if kern is None:
                raise ReconstructionError(
                    f"iteration {it}: bucket {bucket_no}: kernel launch "
                    f"id {launch.external_id} matches no compute kernel",
                    bucket_id=bucket_no,
                )
            per_iter_b[bucket_no].append((kern.start_us, kern.end_us))
            # steps 3-4: shared id on the forward thread -> the bucket's
            # first forward operator; its neighbour carries the kernel id
            f_idx = next(
                (k for k, (_, e) in enumerate(fwd_ops)
                 if e.external_id == comm.external_id),
                None,
            )
            if f_idx is None or f_idx + 1 >= len(fwd_ops):
                raise ReconstructionError(
                    f"iteration {it}: bucket {bucket_no}: forward operators "
                    "missing",
                    bucket_id=bucket_no,
                )
            fkern = kernels.get(fwd_ops[f_idx + 1][1].external_id)
            if fkern is None:
                raise ReconstructionError(
                    f"iteration {it}: bucket {bucket_no}: no forward compute "
                    "kernel",
                    bucket_id=bucket_no,
                )
            per_iter_f[bucket_no].append((fkern.start_us, fkern.end_us))
            per_iter_c[bucket_no].append(comm.end_us - comm.start_us)

    buckets = []
    for j in range(1, n_buckets + 1):
        f_times = [e - s for s, e in per_iter_f[j]]
        b_times = [e - s for s, e in per_iter_b[j]]
        buckets.append(BucketProfile(
            id=j,
            param_count=params[j],
            forward_us=int(statistics.median_low(f_times)),
            backward_us=int(statistics.median_low(b_times)),
            comm_fast_us=int(statistics.median_low(per_iter_c[j])),
        ))
    meta = trace.metadata or {}
    return ModelProfile(
        name=meta.get("name", "reconstructed"),
        buckets=tuple(buckets),
        batch_size=int(meta.get("batch_size", 1)),
        learning_rate=float(meta.get("learning_rate", 0.01)),
    )


def trace_to_dict(trace: OperatorTrace) -> dict:
    return {
        "events": [asdict(e) for e in trace.events],
        "iteration_boundaries_us": list(trace.iteration_boundaries_us),
        "metadata": trace.metadata,
    }


def trace_from_dict(data: dict) -> OperatorTrace:
    if not isinstance(data, dict) or "events" not in data:
        raise SchemaError("trace document must be an object with 'events'")
    if "iteration_boundaries_us" not in data:
        raise SchemaError("trace document missing 'iteration_boundaries_us'")
    events = []
    for i, re_ in enumerate(data["events"]):
        ctx = f"trace event[{i}]"
        for key in ("name", "thread", "external_id", "start_us", "end_us", "kind"):
            if key not in re_:
                raise SchemaError(f"{ctx}: missing field {key!r}")
        events.append(OperatorEvent(
            name=str(re_["name"]),
            thread=str(re_["thread"]),
            external_id=int(re_["external_id"]),
            start_us=int(re_["start_us"]),
            end_us=int(re_["end_us"]),
            kind=str(re_["kind"]),
        ))
    return OperatorTrace(
        events=tuple(events),
        iteration_boundaries_us=tuple(int(t) for t in data["iteration_boundaries_us"]),
        metadata=dict(data.get("metadata", {})),
    )


def load_trace(path: str | Path) -> OperatorTrace:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e})") from e
    return trace_from_dict(data)


def save_trace(trace: OperatorTrace, path: str | Path) -> None:
    Path(path).write_text(json.dumps(trace_to_dict(trace), indent=2))
