"""Error taxonomy shared across the kit."""


class GeometryError(ValueError):
    """Shape, stride, padding, or channel-count violation."""


class DomainError(ValueError):
    """Basis function evaluated outside its valid input interval."""


class ParameterError(ValueError):
    """Invalid basis or layer parameterization."""


class InputError(ValueError):
    """Bad user-supplied value (label range, empty metric window, ...)."""


class ConfigError(ValueError):
    """Invalid model, block, or run configuration."""


class FormatError(ValueError):
    """Malformed on-disk data (dataset files, checkpoints)."""


class NumericError(ArithmeticError):
    """NaN/Inf where a finite value is required."""
