"""Exception hierarchy shared across the package."""


class VoxportError(Exception):
    """Base class for all voxport errors."""


class ParseError(VoxportError):
    """Malformed input file; the message names the offending line."""


class UnsupportedFormatError(VoxportError):
    """Input file is well-formed but uses an unsupported layout."""


class CorruptFileError(VoxportError):
    """File body does not match what its header declares."""


class InvalidArgumentError(VoxportError):
    """An argument violates a documented precondition."""


class OutOfBoundsError(VoxportError):
    """A point lies outside the bounding box it must be contained in."""


class InsufficientPointsError(VoxportError):
    """A point set is too small for the requested operation."""


class ShapeError(VoxportError):
    """Tensor or matrix shapes do not agree."""
