"""Bucket partitioning and fusion.

Produces the bucket list the scheduler operates on. Two constraints drive
re-partitioning: a parameter-count partition size, and the requirement that
no bucket's fast-link communication time reaches the smallest per-stage
knapsack capacity (total forward time divided by the link speed ratio).
Splits divide a bucket's times and parameters proportionally; totals are
conserved exactly in integer microseconds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InfeasiblePartitionError
from .profiles import BucketProfile, ModelProfile

DEFAULT_PARTITION_SIZE = 6_500_000


@dataclass(frozen=True)
class PartitionConfig:
    partition_size: int = DEFAULT_PARTITION_SIZE
    mu: float = 1.0
    enable_fusion: bool = False
    comm_startup_us: int = 0

    def __post_init__(self):
        if self.partition_size <= 0:
            raise InfeasiblePartitionError("partition_size must be > 0")
        if self.mu < 1.0:
            raise InfeasiblePartitionError("mu must be >= 1")
        if self.comm_startup_us < 0:
            raise InfeasiblePartitionError("comm_startup_us must be >= 0")


def _split_int(total: int, parts: int) -> list[int]:
    """Split an integer into `parts` near-equal pieces summing exactly."""
    base, rem = divmod(total, parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


def comm_capacity_bound_us(profile: ModelProfile, cfg: PartitionConfig) -> float:
    """Largest admissible per-bucket fast-link comm time (strict bound)."""
    return profile.total_forward_us / cfg.mu


def _split_bucket(bucket: BucketProfile, parts: int) -> list[BucketProfile]:
    # every piece needs at least one parameter and one microsecond of comm
    parts = max(1, min(parts, bucket.param_count, bucket.comm_fast_us))
    params = _split_int(bucket.param_count, parts)
    fwd = _split_int(bucket.forward_us, parts)
    bwd = _split_int(bucket.backward_us, parts)
    comm = _split_int(bucket.comm_fast_us, parts)
    return [
        BucketProfile(
            id=0,  # renumbered by caller
            param_count=params[i],
            forward_us=fwd[i],
            backward_us=bwd[i],
            comm_fast_us=comm[i],
        )
        for i in range(parts)
    ]


def partition_buckets(profile: ModelProfile, cfg: PartitionConfig) -> ModelProfile:
    """Split buckets until both the size and the capacity constraints hold.

    Bucket order is preserved; split pieces take consecutive ids. A bucket
    that cannot be split further (a single parameter) yet still violates the
    capacity bound is infeasible.
    """
    bound = comm_capacity_bound_us(profile, cfg)
    out: list[BucketProfile] = []
    for b in profile.buckets:
        parts = 1
        if b.param_count > cfg.partition_size:
            parts = math.ceil(b.param_count / cfg.partition_size)
        if b.comm_fast_us / parts >= bound:
            parts = max(parts, math.ceil(b.comm_fast_us / bound))
        # the bound is strict and integer splitting rounds pieces up, so keep
        # splitting until the largest piece clears it
        while parts <= b.param_count and math.ceil(b.comm_fast_us / parts) >= bound:
            parts += 1
        if parts > b.param_count:
            raise InfeasiblePartitionError(
                f"bucket {b.id}: comm time {b.comm_fast_us}us cannot be split "
                f"below the capacity bound {bound:.1f}us",
                bucket_id=b.id,
            )
        if parts == 1:
            out.append(b)
        else:
            out.extend(_split_bucket(b, parts))
    # integer splits may leave one piece at or above the strict bound when
    # remainders pile up; verify and renumber
    renum = []
    for i, b in enumerate(out, start=1):
        if b.comm_fast_us >= bound:
            raise InfeasiblePartitionError(
                f"bucket piece {i}: comm {b.comm_fast_us}us >= bound {bound:.1f}us",
                bucket_id=i,
            )
        renum.append(
            BucketProfile(
                id=i,
                param_count=b.param_count,
                forward_us=b.forward_us,
                backward_us=b.backward_us,
                comm_fast_us=b.comm_fast_us,
            )
        )
    return ModelProfile(
        name=profile.name,
        buckets=tuple(renum),
        batch_size=profile.batch_size,
        learning_rate=profile.learning_rate,
        notes=dict(profile.notes),
    )


def partition_by_size(profile: ModelProfile, partition_size: int) -> ModelProfile:
    """Split buckets on the parameter-count partition size only.

    This is the baseline schedulers' partitioning; it ignores the
    communication capacity bound.
    """
    if partition_size <= 0:
        raise InfeasiblePartitionError("partition_size must be > 0")
    out: list[BucketProfile] = []
    for b in profile.buckets:
        parts = math.ceil(b.param_count / partition_size)
        out.extend([b] if parts == 1 else _split_bucket(b, parts))
    renum = [
        BucketProfile(
            id=i,
            param_count=b.param_count,
            forward_us=b.forward_us,
            backward_us=b.backward_us,
            comm_fast_us=b.comm_fast_us,
        )
        for i, b in enumerate(out, start=1)
    ]
    return ModelProfile(
        name=profile.name,
        buckets=tuple(renum),
        batch_size=profile.batch_size,
        learning_rate=profile.learning_rate,
        notes=dict(profile.notes),
    )


def fuse_buckets(
    profile: ModelProfile, comm_startup_us: int, cfg: PartitionConfig
) -> ModelProfile:
    """Greedily merge adjacent buckets while that lowers modeled comm cost.

    Modeled cost of a bucket is payload time plus one startup; merging two
    neighbours saves one startup and never increases total cost. Merges that
    would push the merged payload to or past the capacity bound are skipped.
    """
    if comm_startup_us < 0:
        raise InfeasiblePartitionError("comm_startup_us must be >= 0")
    bound = comm_capacity_bound_us(profile, cfg)
    merged: list[BucketProfile] = []
    for b in profile.buckets:
        if (
            merged
            and comm_startup_us > 0
            and merged[-1].comm_fast_us + b.comm_fast_us < bound
        ):
            prev = merged[-1]
            merged[-1] = BucketProfile(
                id=prev.id,
                param_count=prev.param_count + b.param_count,
                forward_us=prev.forward_us + b.forward_us,
                backward_us=prev.backward_us + b.backward_us,
                comm_fast_us=prev.comm_fast_us + b.comm_fast_us,
            )
        else:
            merged.append(b)
    renum = [
        BucketProfile(
            id=i,
            param_count=b.param_count,
            forward_us=b.forward_us,
            backward_us=b.backward_us,
            comm_fast_us=b.comm_fast_us,
        )
        for i, b in enumerate(merged, start=1)
    ]
    return ModelProfile(
        name=profile.name,
        buckets=tuple(renum),
        batch_size=profile.batch_size,
        learning_rate=profile.learning_rate,
        notes=dict(profile.notes),
    )
