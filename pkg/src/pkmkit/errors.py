"""Exception hierarchy shared by all modules."""


class PKMError(Exception):
    """Base class for every error raised by pkmkit."""


class DescriptionError(PKMError):
    """Mechanism description is malformed."""


class ParseError(DescriptionError):
    pass


class DisconnectedGraph(DescriptionError):
    pass


class NoGroundLink(DescriptionError):
    pass


class DuplicateId(DescriptionError):
    pass


class UnsupportedJointKind(DescriptionError):
    pass


class ZeroLengthLink(DescriptionError):
    pass


class NumericalError(PKMError):
    """A numerical procedure failed or was asked to work outside its domain."""


class DimensionMismatch(NumericalError):
    pass


class NonFiniteEntry(NumericalError):
    pass


class NotAdmissible(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class SingularIteration(NumericalError):
    pass


class OutOfWorkspace(NumericalError):
    pass


class ProbeProjectionFailed(NumericalError):
    pass


class EmptyIntersection(NumericalError):
    pass


class SeedNotAdmissible(NumericalError):
    pass


class BudgetExhausted(NumericalError):
    """Raised only when a caller asks for strict budgets; the sampler normally flags instead."""


class TaskProbeOutsideAtlas(NumericalError):
    pass


class CSpaceSingular(NumericalError):
    pass


class ChartInvalid(NumericalError):
    pass


class PrestressNotInNullSpace(NumericalError):
    pass


class MissingInertialData(NumericalError):
    pass


class Underactuated(NumericalError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ChartDegenerated(NumericalError):
    pass


class ConstraintDriftExceeded(NumericalError):
    pass


class MixedOutputUnits(NumericalError):
    pass
