"""Exception hierarchy shared by the engine, pipeline and CLI.

The CLI maps these onto process exit codes: usage errors exit 2 (handled by
click), ``DataError`` and subclasses exit 3, ``NumericError`` exits 4.
"""


class LithoError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(LithoError):
    """Tensor dimensions are inconsistent; message names the offending axis."""


class SizeError(LithoError):
    """A conv/pool output size is not an integer for the given stride/window."""


class ParameterError(LithoError):
    """An operation parameter is outside its documented domain."""


class StateError(LithoError):
    """An operation was called in an invalid order (e.g. backward before forward)."""


class DegenerateBatchError(LithoError):
    """Batch statistics requested on a batch too small to define them."""


class DataError(LithoError):
    """Manifest, label or corpus-level problem (CLI exit code 3)."""


class IngestionError(DataError):
    """An input image or its metadata cannot be ingested."""


class SplitError(DataError):
    """A dataset split cannot satisfy the per-class draw counts."""


class CheckpointError(DataError):
    """A checkpoint file is corrupt, truncated or of an unsupported version."""


class NumericError(LithoError):
    """Non-finite values encountered during training (CLI exit code 4)."""
