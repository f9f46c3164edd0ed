"""Exception types.

Every error is either a ``ConfigError`` (bad parameters or structure supplied by
the caller) or a ``DataError`` (inputs whose content cannot be processed). The
CLI maps the two families to distinct exit codes.
"""


class HieraggError(Exception):
    """Base class for all library errors."""


class ConfigError(HieraggError, ValueError):
    pass


class DataError(HieraggError, ValueError):
    pass


# hierarchy
class DuplicateNode(ConfigError):
    pass


class EmptyPartition(ConfigError):
    pass


class UnprunedEmptyLeaf(ConfigError):
    pass


class SingularConstraintGram(ConfigError):
    pass


class DimensionMismatch(DataError):
    pass


class DisjointHouseholdSets(DataError):
    pass


# standardize
class SingularGram(DataError):
    pass


class WindowTooShort(DataError):
    pass


class UnknownNode(DataError):
    pass


# aggregate
class NonPositiveLambda(ConfigError):
    pass


class NonPositiveE(ConfigError):
    pass


class NotInSimplex(DataError):
    pass


class L1RadiusExceeded(DataError):
    pass


class OutOfOrderObservation(DataError):
    pass


class EmptyGrid(ConfigError):
    pass


# features
class InsufficientHistory(DataError):
    pass


class DegenerateDesign(DataError):
    pass


class EmptyTraining(DataError):
    pass


class EmptyNode(DataError):
    pass


class MissingNode(DataError):
    pass


class GapInTimestamps(DataError):
    pass


# cluster
class ZeroMeanHousehold(DataError):
    pass


class NegativeInput(DataError):
    pass


class RankTooLarge(ConfigError):
    pass


class ZeroColumn(DataError):
    pass


class KTooLarge(ConfigError):
    pass


class MismatchedSets(DataError):
    pass


class UnknownColumn(ConfigError):
    pass


# evaluate
class MisalignedPanels(DataError):
    pass


class SingularRunGram(DataError):
    pass


class NoLeaves(ConfigError):
    pass


# pipeline
class InvalidDateRange(ConfigError):
    pass


class StageError(HieraggError):
    """Wraps a sub-module error with the pipeline stage it came from."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
