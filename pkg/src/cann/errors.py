"""Exception types shared across the package."""


class CannError(Exception):
    """Base class for all package errors."""


class ShapeError(CannError):
    """Tensor shapes incompatible with the requested operation."""


class ContractError(CannError):
    """A caller violated an operation's contract (non-shape)."""


class DataValidationError(CannError):
    """A dataset or feature file failed validation."""


class CheckpointError(CannError):
    """A checkpoint file is corrupt, truncated, or version-incompatible."""


class TrainingError(CannError):
    """Training aborted (e.g. non-finite loss)."""
