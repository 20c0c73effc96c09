"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class FairTPError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(FairTPError, ValueError):
    """An operation received arguments that violate its preconditions."""


class EmptyRegionError(InvalidInputError):
    """A region has no sampled sensors when a regional value is required."""


class CoverageError(FairTPError):
    """The sampler produced a round that leaves a region uncovered."""


class ConfigError(FairTPError, ValueError):
    """A configuration document failed schema validation."""


class DataError(FairTPError, ValueError):
    """An input file could not be parsed into a valid dataset."""


class TrainingDivergenceError(FairTPError, ArithmeticError):
    """A training loss became non-finite."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
