"""Exception types raised across matchkit."""


class MatchkitError(Exception):
    """Base class for all library errors."""


class ValidationError(MatchkitError, ValueError):
    """Invalid input or configuration (CLI exit code 1)."""


# geometry
class DegenerateWarp(MatchkitError):
    pass


class InvalidDepth(MatchkitError):
    pass


class BehindCamera(MatchkitError):
    pass


class ZeroTranslation(MatchkitError):
    pass


class EmptyInput(ValidationError):
    pass


# detect
class EmptyPyramid(MatchkitError):
    pass


# describe
class OutOfBounds(MatchkitError):
    pass


class PatchOutOfBounds(MatchkitError):
    pass


class DimensionMismatch(ValidationError):
    pass


# matcher
class UnknownSource(MatchkitError, KeyError):
    pass


class EmptySupervision(MatchkitError):
    pass


class NonFiniteLoss(MatchkitError, FloatingPointError):
    pass


# robustpose
class TooFewPoints(MatchkitError):
    pass


class DegenerateSample(MatchkitError):
    pass


class CheiralityTie(MatchkitError):
    pass


# synthgen
class TextureTooFlat(ValidationError):
    pass


class RetryExhausted(MatchkitError):
    pass


class FormatError(ValidationError):
    """Malformed file in one of the matchkit on-disk formats."""
