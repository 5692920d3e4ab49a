"""Exception hierarchy shared by all pipeline modules."""


class HyperfakeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(HyperfakeError):
    """Input violates a documented precondition or invariant."""


class SchemaError(ValidationError):
    """A structured file does not match its documented schema."""


class LeakageError(ValidationError):
    """A video id appears in more than one dataset split."""


class StratificationError(ValidationError):
    """Too few videos per label to stratify a split."""


class ChannelError(ValidationError):
    """Decoded image does not have exactly three channels."""


class FormatError(HyperfakeError):
    """Binary container is malformed (bad magic, truncation, dim mismatch)."""


class CheckpointError(HyperfakeError):
    """Checkpoint or weights archive cannot be restored."""


class ShapeError(HyperfakeError):
    """Array shapes violate an operation's contract."""


class ConfigError(HyperfakeError):
    """Configuration values violate their invariants."""


class NumericError(HyperfakeError):
    """Non-finite values encountered in a numeric path."""


class MetricError(HyperfakeError):
    """Metric preconditions violated (e.g. single-class score set)."""


class DomainError(HyperfakeError):
    """Argument outside an operation's documented domain."""


class IntegrityError(HyperfakeError):
    """Provenance hashes recorded in an artifact do not match its inputs."""
