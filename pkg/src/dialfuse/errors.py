"""Exception types shared across the package."""


class DialfuseError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DialfuseError):
    """Tensor extents are incompatible with the requested operation."""


class NumericError(DialfuseError):
    """A non-finite value appeared where a finite one is required."""


class ContractError(DialfuseError):
    """A caller violated an operation's precondition."""


class ValidationError(DialfuseError):
    """Structured data failed an invariant check."""


class FormatError(DialfuseError):
    """A serialized file does not match its declared format."""


class TruncationError(FormatError):
    """A serialized file is shorter than its header promises."""


class DomainError(DialfuseError):
    """A numeric argument lies outside the operation's domain."""
