"""Exception hierarchy shared across the package.

Every operation that can reject its input raises one of these, so callers
(and the CLI) can distinguish bad data (exit 1) from bugs (exit 2).
"""


class DalcError(Exception):
    """Base class for all errors raised by this package."""


# dataset
class MissingFile(DalcError):
    pass


class MalformedHeader(DalcError):
    pass


class DimensionMismatch(DalcError):
    pass


# metrics
class EmptyReference(DalcError):
    pass


class EmptyList(DalcError):
    pass


class LengthMismatch(DalcError):
    pass


# features
class EmptyTrace(DalcError):
    pass


class NonPositiveProbability(DalcError):
    pass


class ZeroVector(DalcError):
    pass


class EmptySample(DalcError):
    pass


class EmptyMatrix(DalcError):
    pass


# curvefit
class TooFewObservations(DalcError):
    pass


class DegenerateSizes(DalcError):
    pass


# gbt
class EmptyTrainingSet(DalcError):
    pass


class NonFiniteFeature(DalcError):
    pass


# net
class TooFewInstances(DalcError):
    pass


class MissingSample(DalcError):
    pass


# harness
class InsufficientDomains(DalcError):
    pass


class NoGoldLabels(DalcError):
    pass


class InvalidSpec(DalcError):
    pass
