"""Exception types shared across the package."""


class OpeSelectError(Exception):
    """Base class for all package-specific errors."""


class FullSupportError(OpeSelectError, ValueError):
    """A logged action has zero propensity under the logging policy."""


class SchemaMismatchError(OpeSelectError, ValueError):
    """Feature schema of an input does not match what a model was trained on."""


class ModelFormatError(OpeSelectError, ValueError):
    """A serialized model artifact is corrupt, truncated, or version-incompatible."""


class DegenerateSplitError(OpeSelectError, RuntimeError):
    """A stochastic split left one side empty after the allowed retries."""


class TrainingDivergedError(OpeSelectError, RuntimeError):
    """An iterative fit produced non-finite parameters or loss."""
