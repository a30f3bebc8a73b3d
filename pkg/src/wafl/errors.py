"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line entry point:
1 for usage/config errors, 2 for data or format errors, 3 for numeric failures.
"""


class WaflError(Exception):
    exit_code = 2


class ConfigError(WaflError):
    exit_code = 1


class DataError(WaflError):
    exit_code = 2


class InvalidInterval(DataError):
    pass


class OverlappingTokens(DataError):
    pass


class EmptySequence(DataError):
    pass


class FormatError(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class MissingFeatures(DataError):
    pass


class InvalidConfig(ConfigError):
    pass


class DegenerateClass(DataError):
    pass


class DegenerateDataset(DataError):
    pass


class ScoreCountMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class InvalidRank(ConfigError):
    pass


class InvalidLabel(DataError):
    pass


class StaleMask(WaflError):
    """Backward called without a paired forward pass."""


class NumericError(WaflError):
    exit_code = 3


class NonFinite(NumericError):
    pass


class GradcheckFailed(NumericError):
    pass
