"""Exception types shared across the package.

The CLI maps each category to a stable exit code and a machine-readable
category string on stderr, so scripts can branch on failure kind.
"""


class VqaError(Exception):
    """Base class for all package errors."""

    category = "error"
    exit_code = 1


class InputContractError(VqaError):
    """An argument violates a documented precondition (shape, range, mode)."""

    category = "input-contract"
    exit_code = 2


class NumericContractError(VqaError):
    """A numeric precondition failed (zero norm, undefined correlation)."""

    category = "numeric-contract"
    exit_code = 4


class IngestionError(VqaError):
    """A video, frame directory or manifest could not be read."""

    category = "ingestion"
    exit_code = 3


class CheckpointError(VqaError):
    """Checkpoint version or shape mismatch on load."""

    category = "checkpoint"
    exit_code = 5


class AuditError(VqaError):
    """The trainable-parameter audit found an unexpected trainable tensor."""

    category = "audit"
    exit_code = 6
