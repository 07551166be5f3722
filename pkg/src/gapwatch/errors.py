"""Exception types shared across the pipeline."""


class ConfigurationError(ValueError):
    """A config value is invalid or a required prerequisite is missing."""


class ContractViolation(ValueError):
    """Inputs break a documented precondition (shape, size, alignment)."""


class StorageError(OSError):
    """Reading or writing a dataset / checkpoint failed."""


class CheckpointMismatch(ValueError):
    """A checkpoint's declared architecture does not match expectations."""


class UnevaluableSide(RuntimeError):
    """A gap side has no usable frames (all visibility weights zero)."""
