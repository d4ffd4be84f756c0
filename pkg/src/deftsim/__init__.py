"""Communication scheduling for data-parallel training, with a simulator.

Plans bucket-level gradient communication over heterogeneous links,
optionally delaying and merging parameter updates to keep the compute
stream busy, and verifies that merged updates preserve expected
convergence. A discrete-event simulator compares the resulting schedules
against plain-overlap, priority, and fused-block baselines.
"""

from .errors import (
    ComparisonError,
    DeftError,
    DegenerateDistributionError,
    InfeasiblePartitionError,
    InternalInvariantError,
    MalformedTraceError,
    NonSteadyStateError,
    ProfileValidationError,
    ReconstructionError,
    ScheduleMismatchError,
    SchemaError,
    ValidationError,
)
from .knapsack import (
    Item,
    KnapsackAssignment,
    brute_force_multi_knapsack,
    greedy_multi_knapsack,
    naive_knapsack,
    recursive_knapsack,
)
from .partition import (
    PartitionConfig,
    comm_capacity_bound_us,
    fuse_buckets,
    partition_buckets,
    partition_by_size,
)
from .preserver import (
    BatchSequence,
    ConvergenceVerdict,
    WalkParams,
    baseline_expected_state,
    check_sequence,
    expected_next_state,
    extract_batch_sequence,
    feedback_loop,
    sequence_expected_state,
)
from .profiles import (
    BucketProfile,
    ClusterSpec,
    LinkSpec,
    ModelProfile,
    cluster_from_dict,
    comm_time_on_link,
    coverage_rate,
    load_cluster,
    load_profile,
    multi_link_coverage_rate,
    profile_from_dict,
    profile_to_dict,
    save_profile,
)
from .scheduler import (
    SCHEMES,
    CapacityModel,
    Case,
    DeftScheduler,
    QueueState,
    Schedule,
    ScheduleDecision,
    UpdateEvent,
    baseline_nonsequential,
    baseline_priority,
    baseline_wfbp,
    build_schedule,
    deft_schedule,
    effective_update_frequency,
)
from .simulator import (
    Event,
    SimConfig,
    SimReport,
    compare,
    export_chrome_trace,
    simulate,
)
from .trace import (
    OperatorEvent,
    OperatorTrace,
    emit_trace,
    load_trace,
    reconstruct_buckets,
    save_trace,
    trace_from_dict,
    trace_to_dict,
)

__version__ = "0.1.0"
