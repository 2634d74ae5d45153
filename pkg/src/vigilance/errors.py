"""Exception hierarchy shared across the package."""


class VigilanceError(Exception):
    """Base class for all package errors."""


class ConfigError(VigilanceError, ValueError):
    """Invalid configuration value or combination."""


class FormatError(VigilanceError, ValueError):
    """A file does not follow its declared layout."""


class ParseError(FormatError):
    """A field could not be converted to the expected type."""


class LabelError(VigilanceError, ValueError):
    """Unknown vigilance-state label."""


class InsufficientDataError(VigilanceError, ValueError):
    """Not enough samples to form the requested unit of work."""


class StratificationError(VigilanceError, ValueError):
    """A stratified partition cannot be formed."""


class FoldError(StratificationError):
    """Stratified k-fold is impossible for the requested fold count."""


class BandResolutionError(VigilanceError, ValueError):
    """A frequency band contains no PSD bins."""


class SchemaError(VigilanceError, ValueError):
    """Feature schema mismatch between inputs."""


class ModelFormatError(FormatError):
    """Malformed or truncated model file."""


class VersionError(ModelFormatError):
    """Unsupported model-file version."""


class CapabilityError(VigilanceError):
    """The model lacks data required by the requested operation."""


class DivergenceError(VigilanceError, ArithmeticError):
    """Training produced a non-finite loss."""


class InputError(VigilanceError, ValueError):
    """Invalid numeric input (NaN, off-simplex, bad shape)."""
