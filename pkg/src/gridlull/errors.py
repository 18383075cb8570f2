"""Exception hierarchy shared across the toolkit.

Every error raised by gridlull derives from `GridlullError`, grouped into a
few broad categories so callers (and the CLI exit-code mapping) can catch at
the right granularity.
"""


class GridlullError(Exception):
    """Base class for all gridlull errors."""


class DataFormatError(GridlullError):
    """A file or in-memory structure violates its declared format."""


class MissingFileError(DataFormatError):
    """A required input file or directory does not exist."""


class MetaMismatchError(DataFormatError):
    """Declared shape/dtype in metadata disagrees with the payload."""


class UnitError(DataFormatError):
    """Variable name or unit string is not one of the accepted values."""


class NonMonotoneAxisError(DataFormatError):
    """A coordinate axis is not strictly monotone."""


class ValidationError(DataFormatError):
    """A domain-type invariant does not hold (NaN values, bad ranges, ...)."""


class GridpackIoError(GridlullError):
    """Reading or writing a gridpack failed at the OS level."""


class AxisMismatchError(GridlullError):
    """Two gridded objects that must share axes do not."""


class ShapeMismatchError(GridlullError):
    """Array shapes are incompatible with the requested operation."""


class NonDivisibleShapeError(GridlullError):
    """A coarsening factor does not divide the corresponding axis length."""


class InvalidRoughnessError(GridlullError):
    """Surface roughness length is outside the valid range for the log law."""


class DegeneratePolygonError(GridlullError):
    """Region polygon has fewer than three vertices, zero area, or
    self-intersects."""


class EmptyRegionError(GridlullError):
    """A region mask contains no cell with positive area fraction."""


class ZeroResourceError(GridlullError):
    """Capacity allocation impossible: the weighted resource sums to zero."""


class WindowTooLargeError(GridlullError):
    """Rolling window longer than the series it is applied to."""


class EmptySeriesError(GridlullError):
    """An operation received an empty time series."""


class EmptySampleError(GridlullError):
    """Quantile fitting received an empty sample."""


class InsufficientSpanError(GridlullError):
    """Too few points/years for the requested statistic."""


class TooFewMembersError(GridlullError):
    """Ensemble statistics need at least two members."""


class NonFiniteLossError(GridlullError):
    """Training loss became NaN or infinite."""


class NonFiniteStateError(GridlullError):
    """Sampler state became NaN or infinite."""


class ParseError(DataFormatError):
    """A CSV/JSON input could not be parsed; message includes the location."""


class StageMissingError(MissingFileError):
    """A pipeline stage output required by a later stage is absent."""


class ConfigError(GridlullError):
    """Invalid pipeline configuration."""
