"""Exception hierarchy shared across the library.

``ConfigError`` maps to CLI exit code 2, everything else under
``RewardLabError`` maps to exit code 3.
"""


class RewardLabError(Exception):
    """Base class for all library errors."""


class ConfigError(RewardLabError):
    """Invalid configuration (bad field value, schema violation, bad spec)."""


class UsageError(RewardLabError):
    """An operation was called in a way its contract forbids."""


class ShapeError(RewardLabError):
    """Array dimension mismatch between data and a network."""


class ParseError(RewardLabError):
    """Malformed serialized artifact; message names the offending location."""


class PartitionError(RewardLabError):
    """Dataset partition cannot be built or is inconsistent."""


class StrategyError(RewardLabError):
    """A reward-learning strategy received inputs it cannot train on."""


class DataError(RewardLabError):
    """Missing or inconsistent dataset-level information."""


class TrainingError(RewardLabError):
    """Numerical failure during training (non-finite gradients or targets)."""


class MetricError(RewardLabError):
    """A metric is undefined for the given inputs."""


class PipelineError(RewardLabError):
    """A pipeline stage is missing an upstream artifact or failed to run."""


class GroundTruthAccessError(RewardLabError):
    """Ground-truth rewards were read outside an authorized purpose."""
