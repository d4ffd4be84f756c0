"""Convergence preservation for delayed and merged parameter updates.

Training progress is modeled as a one-dimensional random walk of the
distance-to-optimum statistic. One update computed from an effective batch
of size B moves the state s by a Gaussian step of mean eta*mu and standard
deviation eta*sigma/sqrt(B), reflected at the optimum S*: the expected next
state has the closed form of E|X| + S* for the shifted Gaussian X.

Merging updates trades fewer steps for larger effective batches. The
preserver compares the expected walk endpoint of the merged sequence with
the per-iteration baseline and, when the two diverge beyond a tolerance,
asks the scheduler to retry with more communication capacity so that fewer
iterations get merged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace

from .errors import (
    DegenerateDistributionError,
    NonSteadyStateError,
    ProfileValidationError,
)
from .scheduler import Schedule, ScheduleDecision, deft_schedule

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class WalkParams:
    """Parameters of the distance-to-optimum random walk."""

    s0: float
    s_star: float
    eta: float
    mu_t: float
    sigma_t: float
    epsilon: float = 0.01

    def __post_init__(self):
        if self.eta <= 0:
            raise ProfileValidationError("eta must be > 0")
        if self.sigma_t == 0:
            raise DegenerateDistributionError(
                "sigma_t = 0: the walk step distribution is degenerate"
            )
        if self.sigma_t < 0:
            raise ProfileValidationError("sigma_t must be > 0")
        if self.s0 < self.s_star:
            raise ProfileValidationError("s0 must start at or above s_star")
        if not (0 < self.epsilon < 1):
            raise ProfileValidationError("epsilon must be in (0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "WalkParams":
        return cls(
            s0=float(data["s0"]),
            s_star=float(data["s_star"]),
            eta=float(data["eta"]),
            mu_t=float(data["mu_t"]),
            sigma_t=float(data["sigma_t"]),
            epsilon=float(data.get("epsilon", 0.01)),
        )


@dataclass(frozen=True)
class BatchSequence:
    """Effective batch multipliers of one steady-state period.

    `k_values[i]` iterations were merged into update i, so update i uses an
    effective batch of k_values[i] times the per-iteration batch size. The
    period spans sum(k_values) iterations.
    """

    k_values: tuple[int, ...]
    base_batch_size: int

    def __post_init__(self):
        if not self.k_values or any(k < 1 for k in self.k_values):
            raise ProfileValidationError("k_values must be positive and non-empty")
        if self.base_batch_size < 1:
            raise ProfileValidationError("base_batch_size must be >= 1")

    @property
    def n_iterations(self) -> int:
        return sum(self.k_values)

    @property
    def n_updates(self) -> int:
        return len(self.k_values)

    def batch_sizes(self) -> list[int]:
        return [k * self.base_batch_size for k in self.k_values]


def expected_next_state(s: float, batch_size: int, p: WalkParams) -> float:
    """Expected walk state after one update from an effective batch.

    The pre-reflection state is Gaussian with mean m = s - S* - eta*mu and
    deviation v = eta*sigma/sqrt(B); reflection at the optimum gives
    E|N(m, v^2)| + S*.
    """
    if batch_size < 1:
        raise ProfileValidationError("batch_size must be >= 1")
    m = s - p.s_star - p.eta * p.mu_t
    v = p.eta * p.sigma_t / math.sqrt(batch_size)
    a = m / v
    # Phi(a) - Phi(-a) = erf(a / sqrt(2))
    inner = m * math.erf(a / math.sqrt(2.0))
    tail = v * SQRT_2_OVER_PI * math.exp(-0.5 * a * a)
    return inner + tail + p.s_star


def sequence_expected_state(seq: BatchSequence, p: WalkParams) -> float:
    """Propagate the expected state through one period of updates."""
    s = p.s0
    for b in seq.batch_sizes():
        s = expected_next_state(s, b, p)
    return s


def baseline_expected_state(n_iterations: int, base_batch_size: int, p: WalkParams) -> float:
    """Expected state after n per-iteration updates at the base batch size."""
    seq = BatchSequence(k_values=(1,) * n_iterations, base_batch_size=base_batch_size)
    return sequence_expected_state(seq, p)


def _update_k_values(decisions: list[ScheduleDecision]) -> list[int]:
    ks = []
    for d in decisions:
        for u in d.update_events:
            ks.append(u.merge_count)
    return ks


def extract_batch_sequence(
    schedule: Schedule, max_window: int = 500
) -> BatchSequence:
    """Find the steady-state period of merge counts in a decision stream.

    Scans the tail of the update stream for the shortest pattern that
    repeats at least twice and covers every iteration of the tail (the sum
    of its merge counts equals its iteration span). A schedule that never
    settles raises NonSteadyStateError.
    """
    ks = _update_k_values(schedule.decisions)
    if not ks:
        raise NonSteadyStateError("schedule performed no parameter updates")
    base = schedule.profile.batch_size
    if schedule.iterations > max_window:
        ks = ks[-max_window:]
    # drop a warm-up prefix: keep the longest tail that is periodic
    tail = ks
    for period in range(1, len(tail) // 2 + 1):
        pat = tail[-period:]
        reps = 0
        i = len(tail)
        while i >= period and tail[i - period:i] == pat:
            reps += 1
            i -= period
        if reps >= 2:
            return BatchSequence(k_values=tuple(pat), base_batch_size=base)
    if len(tail) == 1:
        return BatchSequence(k_values=tuple(tail), base_batch_size=base)
    raise NonSteadyStateError(
        f"no periodic steady state in the last {len(tail)} updates: {tail}"
    )


@dataclass(frozen=True)
class ConvergenceVerdict:
    preserved: bool
    ratio: float
    expected_state: float
    baseline_state: float
    sequence: BatchSequence
    retries: int
    capacity_multiplier: float


def check_sequence(seq: BatchSequence, p: WalkParams) -> tuple[bool, float, float, float]:
    """Compare one merged period against the per-iteration baseline."""
    merged = sequence_expected_state(seq, p)
    base = baseline_expected_state(seq.n_iterations, seq.base_batch_size, p)
    denom = merged - p.s_star
    if denom <= 0:
        ratio = 1.0
    else:
        ratio = (base - p.s_star) / denom
    preserved = abs(ratio - 1.0) <= p.epsilon
    return preserved, ratio, merged, base


def feedback_loop(
    profile,
    cluster,
    partition_cfg,
    walk: WalkParams,
    iterations: int = 200,
    max_retries: int = 10,
    multiplier_step: float = 1.1,
    single_link: bool = False,
) -> tuple[Schedule, ConvergenceVerdict]:
    """Schedule, check convergence, and widen capacities until preserved.

    Each retry multiplies the knapsack capacity multiplier by
    `multiplier_step`, which lets the scheduler pack more communication per
    stage and merge fewer iterations. Returns the last schedule either way;
    the verdict says whether preservation was reached.
    """
    mult = 1.0
    schedule = None
    verdict = None
    for attempt in range(max_retries + 1):
        schedule = deft_schedule(
            profile, cluster, partition_cfg, iterations,
            capacity_multiplier=mult, single_link=single_link,
        )
        seq = extract_batch_sequence(schedule)
        preserved, ratio, merged, base = check_sequence(seq, walk)
        verdict = ConvergenceVerdict(
            preserved=preserved,
            ratio=ratio,
            expected_state=merged,
            baseline_state=base,
            sequence=seq,
            retries=attempt,
            capacity_multiplier=mult,
        )
        if preserved:
            break
        mult *= multiplier_step
    return schedule, verdict
