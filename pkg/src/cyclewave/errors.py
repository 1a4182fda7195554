"""Exception types shared across the package."""


class CycleWaveError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(CycleWaveError, ValueError):
    """Operands have incompatible shapes or extents."""


class ContractError(CycleWaveError, ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(CycleWaveError, ValueError):
    """A configuration value is invalid or inconsistent."""


class TapeError(CycleWaveError, RuntimeError):
    """Backward was requested without a usable gradient tape."""


class AudioFormatError(CycleWaveError, ValueError):
    """A WAV file could not be parsed or uses an unsupported encoding."""


class EmptyAudioError(CycleWaveError, ValueError):
    """An operation received audio with no usable content."""


class DataError(CycleWaveError, ValueError):
    """The training data pool cannot supply what was requested."""


class DivergenceError(CycleWaveError, RuntimeError):
    """Training produced a non-finite or runaway loss."""


class CheckpointError(CycleWaveError, ValueError):
    """A checkpoint file is malformed or incompatible."""


class MetricError(CycleWaveError, ValueError):
    """An evaluation metric is undefined for the given inputs."""
