"""Exception hierarchy.

Every error raised by the library derives from :class:`BioscatterError` so the
CLI can map it to exit code 1 with one ``except`` clause.
"""


class BioscatterError(Exception):
    pass


class InvariantViolation(BioscatterError, ValueError):
    pass


# codecs
class BadMagic(BioscatterError, ValueError):
    pass


class BadVersion(BioscatterError, ValueError):
    pass


class TruncatedData(BioscatterError, ValueError):
    pass


Truncated = TruncatedData


class DuplicateName(BioscatterError, ValueError):
    pass


class MalformedHeader(BioscatterError, ValueError):
    pass


class ValueOutOfRange(BioscatterError, ValueError):
    pass


class UnknownKey(BioscatterError, ValueError):
    pass


class BadValue(BioscatterError, ValueError):
    pass


# radar / labels
class InvalidGrid(BioscatterError, ValueError):
    pass


class EmptyCoverage(BioscatterError, ValueError):
    pass


class DegenerateRange(BioscatterError, ValueError):
    pass


class DegenerateBand(BioscatterError, ValueError):
    pass


class InvalidParams(BioscatterError, ValueError):
    pass


# tensors / model
class ShapeMismatch(BioscatterError, ValueError):
    pass


class OddSpatialDims(BioscatterError, ValueError):
    pass


class IndivisibleSpatialDims(BioscatterError, ValueError):
    pass


class NoValidPixels(BioscatterError, ValueError):
    pass


class NonScalarLoss(BioscatterError, ValueError):
    pass


class InvalidConfig(BioscatterError, ValueError):
    pass


# training / evaluation
class InsufficientSamples(BioscatterError, ValueError):
    pass


class EmptyTrainSet(BioscatterError, ValueError):
    pass


class EmptyHistory(BioscatterError, ValueError):
    pass


class CheckpointMismatch(BioscatterError, ValueError):
    pass


class EmptyEvaluation(BioscatterError, ValueError):
    pass


class ZeroBase(BioscatterError, ZeroDivisionError):
    pass


class MixedPrecision(BioscatterError, TypeError):
    pass
