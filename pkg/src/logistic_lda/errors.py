"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, data/validation
errors exit 2, training divergence exits 3.
"""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """A structural precondition was violated (shapes, emptiness, kind mismatch)."""


class CorpusFormatError(ValueError):
    """A corpus file is malformed; the message names the offending line."""


class CheckpointError(ValueError):
    """Base class for checkpoint read failures."""


class IntegrityError(CheckpointError):
    """Checkpoint bytes are corrupt or truncated."""


class UnsupportedVersionError(CheckpointError):
    """Checkpoint was written by an unrecognized format version."""


class UnsupportedOperationError(TypeError):
    """The operation is not defined for this encoder kind."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
