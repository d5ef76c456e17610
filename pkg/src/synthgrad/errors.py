"""Exception hierarchy shared by every module."""


class SynthGradError(Exception):
    """Base class for all library errors."""


class DimensionError(SynthGradError, ValueError):
    """Incompatible tensor shapes or an out-of-range axis."""


class ParameterError(SynthGradError, ValueError):
    """A numeric argument outside its allowed domain."""


class NumericError(SynthGradError, ArithmeticError):
    """A NaN or infinity appeared where a finite value was required."""


class StateError(SynthGradError, RuntimeError):
    """An object was used in the wrong lifecycle state (e.g. an empty tape)."""


class DataError(SynthGradError, ValueError):
    """Malformed, missing or empty corpus input."""


class ConfigError(SynthGradError, ValueError):
    """Invalid or unresolvable experiment configuration."""


class IncompatibleCheckpointError(ConfigError):
    """Checkpoint version or configuration hash does not match."""
