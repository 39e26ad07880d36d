"""Exception types shared across the package."""


class CmlspError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(CmlspError, ValueError):
    pass


class LengthMismatch(ShapeMismatch):
    pass


class DimMismatch(ShapeMismatch):
    pass


class PartsExceedHeight(CmlspError, ValueError):
    pass


class TooLarge(CmlspError, ValueError):
    pass


class EmptyBatch(CmlspError, ValueError):
    pass


class DegenerateGamma(CmlspError, ValueError):
    pass


class LabelOutOfRange(CmlspError, ValueError):
    pass


class NeedTwoIdentities(CmlspError, ValueError):
    pass


class InsufficientSamples(CmlspError, ValueError):
    pass


class NoMatchForQuery(CmlspError, ValueError):
    pass


class EmptyNeighborhood(CmlspError, ValueError):
    pass


class ConfigError(CmlspError, ValueError):
    pass


class FormatError(CmlspError, ValueError):
    """Raised when an on-disk file does not match its declared layout."""
