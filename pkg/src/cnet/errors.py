"""Exception and warning types shared across the library."""


class CNetError(Exception):
    """Base class for all library errors."""


# tensor engine
class ShapeMismatch(CNetError):
    pass


class NotScalar(CNetError):
    pass


class DetachedGraph(CNetError):
    pass


class NonFinite(CNetError):
    pass


# layers
class ChannelMismatch(CNetError):
    pass


class NonPositiveOutput(CNetError):
    pass


class TooSmall(CNetError):
    pass


class SpatialMismatch(CNetError):
    pass


class DimMismatch(CNetError):
    pass


class BadRate(CNetError):
    pass


# loss / optim
class BadLabel(CNetError):
    pass


class MissingGrad(CNetError):
    pass


# model / checkpoint
class ConfigInvalid(CNetError):
    pass


class SpatialCollapse(CNetError):
    pass


class FormatVersionMismatch(CNetError):
    pass


class CorruptChecksum(CNetError):
    pass


class ConfigMismatch(CNetError):
    pass


# data pipeline
class EmptyClass(CNetError):
    pass


class StratumTooSmall(CNetError):
    pass


class UnreadableImage(CNetError):
    pass


# metrics
class EmptyMatrix(CNetError):
    pass


# config files
class ConfigError(CNetError):
    pass


class RangeWarning(UserWarning):
    """Diagnostic for model inputs outside the expected [0, 1] range."""
