"""Bucket-level performance model.

All times are integer microseconds so that event ordering in the simulator
is exact and platform independent. Per-link communication time is derived
from the fast-link time by a constant speed ratio; it is never stored.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .errors import ProfileValidationError, SchemaError

FAST_RATIO = 1.0


@dataclass(frozen=True)
class LinkSpec:
    """One communication link (e.g. a collective backend bound to a NIC)."""

    name: str
    speed_ratio_to_fast: float = 1.0
    bandwidth_bps: float | None = None
    startup_us: int = 0

    def __post_init__(self):
        if self.speed_ratio_to_fast < 1.0:
            raise ProfileValidationError(
                f"link {self.name!r}: speed_ratio_to_fast must be >= 1, "
                f"got {self.speed_ratio_to_fast}"
            )
        if self.bandwidth_bps is not None and self.bandwidth_bps <= 0:
            raise ProfileValidationError(f"link {self.name!r}: bandwidth must be > 0")
        if self.startup_us < 0:
            raise ProfileValidationError(f"link {self.name!r}: startup_us must be >= 0")

    @property
    def is_fast(self) -> bool:
        return self.speed_ratio_to_fast == FAST_RATIO


@dataclass(frozen=True)
class ClusterSpec:
    """An ordered set of links; exactly one must be the fast link."""

    links: tuple[LinkSpec, ...]

    def __post_init__(self):
        fast = [l for l in self.links if l.is_fast]
        if len(fast) != 1:
            raise ProfileValidationError(
                f"cluster must have exactly one fast link, found {len(fast)}"
            )
        names = [l.name for l in self.links]
        if len(set(names)) != len(names):
            raise ProfileValidationError("link names must be unique")

    @property
    def fast_link(self) -> LinkSpec:
        return next(l for l in self.links if l.is_fast)


@dataclass(frozen=True)
class BucketProfile:
    """Per-bucket timing; id 1 is the bucket closest to the output layer."""

    id: int
    param_count: int
    forward_us: int
    backward_us: int
    comm_fast_us: int

    def __post_init__(self):
        if self.param_count <= 0:
            raise ProfileValidationError(f"bucket {self.id}: param_count must be > 0")
        if self.forward_us < 0 or self.backward_us < 0:
            raise ProfileValidationError(f"bucket {self.id}: negative compute time")
        if self.comm_fast_us <= 0:
            raise ProfileValidationError(f"bucket {self.id}: comm_fast_us must be > 0")


@dataclass(frozen=True)
class ModelProfile:
    """Ordered bucket list plus the training hyper-parameters other modules need.

    Bucket 1 finishes its backward pass first and is communicated first under
    plain overlap scheduling; the highest id sits next to the input layer and
    runs first in the forward pass.
    """

    name: str
    buckets: tuple[BucketProfile, ...]
    batch_size: int = 1
    learning_rate: float = 0.01
    notes: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.buckets:
            raise ProfileValidationError(f"profile {self.name!r}: empty bucket list")
        ids = [b.id for b in self.buckets]
        if ids != list(range(1, len(ids) + 1)):
            raise ProfileValidationError(
                f"profile {self.name!r}: bucket ids must be contiguous 1..n, got {ids}"
            )
        if self.batch_size < 1:
            raise ProfileValidationError(f"profile {self.name!r}: batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ProfileValidationError(f"profile {self.name!r}: learning_rate must be > 0")

    @property
    def n_buckets(self) -> int:
        return len(self.buckets)

    @property
    def total_forward_us(self) -> int:
        return sum(b.forward_us for b in self.buckets)

    @property
    def total_backward_us(self) -> int:
        return sum(b.backward_us for b in self.buckets)

    @property
    def total_comm_fast_us(self) -> int:
        return sum(b.comm_fast_us for b in self.buckets)

    @property
    def total_param_count(self) -> int:
        return sum(b.param_count for b in self.buckets)

    def bucket(self, bucket_id: int) -> BucketProfile:
        return self.buckets[bucket_id - 1]

    def scaled_comm(self, factor: float, name_suffix: str = "") -> "ModelProfile":
        """Return a copy with every fast-link comm time scaled by `factor`."""
        buckets = tuple(
            BucketProfile(
                id=b.id,
                param_count=b.param_count,
                forward_us=b.forward_us,
                backward_us=b.backward_us,
                comm_fast_us=max(1, round(b.comm_fast_us * factor)),
            )
            for b in self.buckets
        )
        return ModelProfile(
            name=self.name + name_suffix,
            buckets=buckets,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            notes=dict(self.notes),
        )


def comm_time_on_link(bucket: BucketProfile, link: LinkSpec) -> int:
    """Communication time of `bucket` on `link`, in integer microseconds."""
    return round(bucket.comm_fast_us * link.speed_ratio_to_fast)


def coverage_rate(profile: ModelProfile, link: LinkSpec) -> float:
    """Total communication time on `link` divided by total compute time."""
    compute = profile.total_forward_us + profile.total_backward_us
    if compute <= 0:
        raise ProfileValidationError(
            f"profile {profile.name!r}: zero total compute time"
        )
    comm = sum(comm_time_on_link(b, link) for b in profile.buckets)
    return comm / compute


def multi_link_coverage_rate(profile: ModelProfile, cluster: ClusterSpec) -> float:
    """Coverage rate against the combined two-knapsack capacity.

    With per-stage capacities C (fast) and ratio*C per extra link, one
    iteration can hide (1 + sum of ratios) * C worth of fast-link time.
    """
    compute = profile.total_forward_us + profile.total_backward_us
    scale = sum(l.speed_ratio_to_fast for l in cluster.links)
    return profile.total_comm_fast_us / (scale * compute)


def _require(mapping: dict, key: str, ctx: str):
    if key not in mapping:
        raise SchemaError(f"{ctx}: missing field {key!r}")
    return mapping[key]


def profile_from_dict(data: dict) -> ModelProfile:
    if not isinstance(data, dict):
        raise SchemaError("profile document must be a JSON object")
    name = _require(data, "name", "profile")
    raw_buckets = _require(data, "buckets", f"profile {name!r}")
    if not isinstance(raw_buckets, list) or not raw_buckets:
        raise SchemaError(f"profile {name!r}: 'buckets' must be a non-empty list")
    buckets = []
    for i, rb in enumerate(raw_buckets):
        ctx = f"profile {name!r} bucket[{i}]"
        buckets.append(
            BucketProfile(
                id=int(_require(rb, "id", ctx)),
                param_count=int(_require(rb, "param_count", ctx)),
                forward_us=int(_require(rb, "forward_us", ctx)),
                backward_us=int(_require(rb, "backward_us", ctx)),
                comm_fast_us=int(_require(rb, "comm_fast_us", ctx)),
            )
        )
    return ModelProfile(
        name=name,
        buckets=tuple(buckets),
        batch_size=int(data.get("batch_size", 1)),
        learning_rate=float(data.get("learning_rate", 0.01)),
        notes=dict(data.get("notes", {})),
    )


def profile_to_dict(profile: ModelProfile) -> dict:
    return {
        "name": profile.name,
        "batch_size": profile.batch_size,
        "learning_rate": profile.learning_rate,
        "buckets": [asdict(b) for b in profile.buckets],
        "notes": profile.notes,
    }


def load_profile(path: str | Path) -> ModelProfile:
    """Load and validate a model profile from its JSON file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e})") from e
    return profile_from_dict(data)


def save_profile(profile: ModelProfile, path: str | Path) -> None:
    Path(path).write_text(json.dumps(profile_to_dict(profile), indent=2, sort_keys=True))


def cluster_from_dict(data: dict) -> ClusterSpec:
    raw = _require(data, "links", "cluster config")
    if not isinstance(raw, list) or not raw:
        raise SchemaError("cluster config: 'links' must be a non-empty list")
    links = []
    for i, rl in enumerate(raw):
        ctx = f"cluster link[{i}]"
        links.append(
            LinkSpec(
                name=str(_require(rl, "name", ctx)),
                speed_ratio_to_fast=float(rl.get("speed_ratio_to_fast", 1.0)),
                bandwidth_bps=rl.get("bandwidth_bps"),
                startup_us=int(rl.get("startup_us", 0)),
            )
        )
    return ClusterSpec(links=tuple(links))


def load_cluster(path: str | Path) -> ClusterSpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e})") from e
    return cluster_from_dict(data)
