"""Exception hierarchy shared across the package."""


class MotionCascadeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MotionCascadeError):
    """Invalid hierarchy / model / run configuration."""


class ShapeError(MotionCascadeError):
    """Array shape inconsistent with the declared layout."""


class InsufficientDataError(MotionCascadeError):
    """Too few frames or corpus entries for the requested operation."""


class InputError(MotionCascadeError):
    """Malformed user input (empty text, unpaired batches, ...)."""


class ContractError(MotionCascadeError):
    """An operation precondition was violated by the caller."""


class FormatVersionError(MotionCascadeError):
    """A serialized artifact declares an unsupported schema version."""


class IntegrityError(MotionCascadeError):
    """A serialized artifact failed its checksum."""


class ProtocolError(MotionCascadeError):
    """Evaluation protocol precondition violated (pool too small, ...)."""


class CompatibilityError(MotionCascadeError):
    """Checkpoints or artifacts with mismatched config hashes."""


class TrainingDivergenceError(MotionCascadeError):
    """Non-finite loss encountered during training."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
