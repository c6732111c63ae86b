"""Exception types shared across the package."""


class LfsalError(Exception):
    """Base class for all package errors."""


class DimensionError(LfsalError, ValueError):
    """Array extents are incompatible with the requested operation."""


class NumericError(LfsalError, FloatingPointError):
    """A computation produced NaN or Inf."""


class FormatError(LfsalError, ValueError):
    """A file could not be decoded or has the wrong layout."""


class PairingError(LfsalError, ValueError):
    """Predictions/ground truths or light fields/masks do not pair up."""
