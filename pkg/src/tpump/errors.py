"""Exception hierarchy. The CLI reports errors by class name."""


class TPumpError(Exception):
    """Base class for every domain error raised by the library."""


class InvalidInput(TPumpError, ValueError):
    pass


class SizeTooSmall(InvalidInput):
    pass


class IrrationalFrequency(InvalidInput):
    pass


class WavelengthOutOfRange(InvalidInput):
    pass


class GridTooCoarse(TPumpError):
    pass


class NotGuided(TPumpError):
    pass


class InsufficientSamples(InvalidInput):
    pass


class NonPositiveCoupling(InvalidInput):
    pass


class CouplingTooStrong(InvalidInput):
    pass


class OverlapError(TPumpError):
    pass


class NotHermitian(InvalidInput):
    pass


class DimensionMismatch(InvalidInput):
    pass


class GapClosure(TPumpError):
    pass


class OutOfRange(InvalidInput):
    pass


class StepTooLarge(InvalidInput):
    pass


class NotNormalized(InvalidInput):
    pass


class ConfigError(InvalidInput):
    pass
