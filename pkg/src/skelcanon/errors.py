"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data/file
problems exit 2, numeric failures exit 3.
"""


class SkelCanonError(Exception):
    """Base class for all package-specific errors."""


class DataError(SkelCanonError):
    """A problem with input data or files (CLI exit code 2)."""


class NumericError(SkelCanonError):
    """A numeric failure such as a degenerate input or non-finite loss (exit 3)."""


# geometry
class DegenerateRotation(NumericError):
    """6D rotation input collapses under Gram-Schmidt (zero or parallel vectors)."""


class FrameCountMismatch(SkelCanonError):
    pass


class InvalidScale(SkelCanonError):
    pass


class DegenerateSkeleton(NumericError):
    """Character height below the measurable threshold."""


# diffengine
class ShapeMismatch(SkelCanonError):
    pass


class NotScalar(SkelCanonError):
    pass


class MissingGradients(SkelCanonError):
    pass


# model
class BadLength(SkelCanonError):
    """Sequence length does not satisfy the encoder's divisibility contract."""


# data
class InvalidSpec(SkelCanonError):
    pass


class ParseError(DataError):
    pass


class TopologyError(DataError):
    pass


class GapTooLarge(DataError):
    """More than the tolerated number of consecutive missing frames."""


class TooShort(DataError):
    pass


# training
class EmptyBatch(SkelCanonError):
    pass


class NonFiniteLoss(NumericError):
    """A loss term went NaN/Inf; message carries the per-term diagnostic dump."""


class CorruptCheckpoint(DataError):
    pass


# evaluation
class LengthMismatch(SkelCanonError):
    pass


class Empty(SkelCanonError):
    pass


class TooFewPoints(SkelCanonError):
    pass


class EmptyIndex(SkelCanonError):
    pass


# fileio / cli
class UnknownFormat(DataError):
    pass


class UsageError(SkelCanonError):
    """Bad command line (CLI exit code 1)."""
