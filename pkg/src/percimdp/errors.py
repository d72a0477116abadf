"""Exception hierarchy.

Every error carries a fixed process exit code so the command line driver can
map failures to distinct statuses without a lookup table of its own.
"""


class PercImdpError(Exception):
    exit_code = 1


class UsageError(PercImdpError):
    exit_code = 2


# model construction
class RowSumError(PercImdpError):
    exit_code = 10


class DanglingSuccessor(PercImdpError):
    exit_code = 11


class NoActions(PercImdpError):
    exit_code = 12


class IntervalOrderError(PercImdpError):
    exit_code = 13


class InfeasibleRow(PercImdpError):
    exit_code = 14


class StateSetMismatch(PercImdpError):
    exit_code = 15


# checking
class NonConvergence(PercImdpError):
    exit_code = 20


class TooLarge(PercImdpError):
    exit_code = 21


# statistics
class DomainError(PercImdpError, ValueError):
    exit_code = 30


class DegenerateData(PercImdpError):
    exit_code = 31


class SingularInformation(PercImdpError):
    exit_code = 32


class DimensionMismatch(PercImdpError, ValueError):
    exit_code = 33


# abstraction
class DimensionUnsupported(PercImdpError):
    exit_code = 40


class TooFewPoints(PercImdpError):
    exit_code = 41


class MissingTruth(PercImdpError):
    exit_code = 42


class OutOfBounds(PercImdpError):
    exit_code = 43


class MissingPerceptionAction(PercImdpError):
    exit_code = 44


# case study and I/O
class GridError(PercImdpError):
    exit_code = 50


class ConfigError(PercImdpError):
    exit_code = 60


class IoError(PercImdpError):
    exit_code = 61


ALL_ERRORS = (
    UsageError, RowSumError, DanglingSuccessor, NoActions, IntervalOrderError,
    InfeasibleRow, StateSetMismatch, NonConvergence, TooLarge, DomainError,
    DegenerateData, SingularInformation, DimensionMismatch,
    DimensionUnsupported, TooFewPoints, MissingTruth, OutOfBounds,
    MissingPerceptionAction, GridError, ConfigError, IoError,
)
