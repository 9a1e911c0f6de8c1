"""Exception types shared across the toolkit."""


class GendistillError(Exception):
    """Base class for all toolkit errors."""


class UnsupportedDatasetError(GendistillError):
    """Requested dataset name is not one of the supported benchmarks."""


class DatasetLoadError(GendistillError):
    """Raw dataset files are missing, truncated, or malformed."""


class InsufficientSamplesError(GendistillError):
    """A class-conditional batch request exceeds the class population."""


class EmptyDatasetError(GendistillError):
    """Sampling was requested from a handle that holds no images."""


class UnsupportedArchitectureError(GendistillError):
    """Requested architecture id is not registered."""


class ConstructionError(GendistillError):
    """A network spec is invalid (bad noise dim, unsupported output shape, ...)."""


class ConfigError(GendistillError):
    """A configuration value is out of range or inconsistent."""


class NumericalDivergenceError(GendistillError):
    """A training loss became non-finite.

    Carries optional epoch/iteration context and, when the surrounding loop
    managed to persist one, the path of the last good checkpoint.
    """

    def __init__(self, message, epoch=None, iteration=None, checkpoint_path=None):
        super().__init__(message)
        self.epoch = epoch
        self.iteration = iteration
        self.checkpoint_path = checkpoint_path


class CheckpointError(GendistillError):
    """A checkpoint or distilled archive is corrupt or version-incompatible."""
