"""Exception hierarchy shared across the package.

Validation errors map to CLI exit code 2, infeasibility to exit code 3.
"""


class DeftError(Exception):
    """Base class for all package errors."""


class ValidationError(DeftError):
    """Input (profile, config, trace) failed validation."""


class ProfileValidationError(ValidationError):
    """A model/link profile violates an invariant."""


class SchemaError(ValidationError):
    """A JSON document does not match the expected schema."""


class MalformedTraceError(ValidationError):
    """An operator trace is structurally broken (e.g. overlapping stream events)."""


class ReconstructionError(DeftError):
    """Bucket reconstruction from a trace failed; carries the bucket id when known."""

    def __init__(self, message, bucket_id=None):
        super().__init__(message)
        self.bucket_id = bucket_id


class InfeasiblePartitionError(DeftError):
    """A bucket cannot be split far enough to satisfy the capacity bound."""

    def __init__(self, message, bucket_id=None):
        super().__init__(message)
        self.bucket_id = bucket_id


class ScheduleMismatchError(DeftError):
    """A schedule references buckets unknown to the profile being simulated."""


class InternalInvariantError(DeftError):
    """Scheduler state machine reached an inconsistent state; aborts the run."""


class NonSteadyStateError(DeftError):
    """No periodic update pattern was found in the decision stream."""


class DegenerateDistributionError(DeftError):
    """Random-walk noise scale is zero; the expected-state formula is undefined."""


class ComparisonError(DeftError):
    """Simulation reports are not comparable (different profiles or lengths)."""
