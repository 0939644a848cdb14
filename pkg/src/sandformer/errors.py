"""Exception taxonomy shared across the package."""


class SandformerError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SandformerError, ValueError):
    """An operation was called with inconsistent shapes or arguments."""


class StateError(SandformerError, RuntimeError):
    """An object was used in a state it does not allow (e.g. consumed tape)."""


class ConfigError(SandformerError, ValueError):
    """A configuration violates its invariants."""


class DataError(SandformerError, RuntimeError):
    """Input data is missing or unreadable."""


class NumericError(SandformerError, RuntimeError):
    """A numeric failure (NaN loss, failed gradient check)."""


class CheckpointFormatError(SandformerError, RuntimeError):
    """Checkpoint file does not start with the expected magic."""


class UnsupportedVersionError(SandformerError, RuntimeError):
    """Checkpoint version is not supported by this build."""


class CheckpointCorruptionError(SandformerError, RuntimeError):
    """Checkpoint is truncated or fails its checksum."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigMismatchError(SandformerError, RuntimeError):
    """Checkpoint was written under a different model configuration."""

    def __init__(self, field: str, expected, found):
        super().__init__(
            f"checkpoint config mismatch on field '{field}': "
            f"expected {expected!r}, found {found!r}"
        )
        self.field = field
