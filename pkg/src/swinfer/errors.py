"""Exception taxonomy shared by all swinfer modules.

The CLI maps these onto process exit codes (see cli.py): config/usage
problems exit 1, data problems 2, numerical aborts 3, checkpoint
integrity failures 4.
"""


class SwinferError(Exception):
    """Base class for all swinfer errors."""


class DimensionError(SwinferError):
    """Tensor shapes or axes inconsistent with an operation's contract."""


class ConfigError(SwinferError):
    """Invalid or inconsistent configuration."""


class LabelError(SwinferError):
    """Class label outside the active label scheme."""


class DataError(SwinferError):
    """Malformed or unusable input data (rows, files, empty classes)."""


class ContractError(SwinferError):
    """Caller violated an API precondition (non-scalar loss, missing grad, ...)."""


class NumericalError(SwinferError):
    """Non-finite value where the pipeline requires finite numbers."""


class CheckpointError(SwinferError):
    """Checkpoint cannot be read back safely (magic/version/CRC/truncation)."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
