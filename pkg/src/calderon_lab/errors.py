"""Exception hierarchy shared by all modules."""


class LabError(Exception):
    """Base class for every error raised by the package."""


# geometry
class NestingViolation(LabError):
    pass


class DisconnectedLayer(LabError):
    pass


class PortionTooSmall(LabError):
    pass


class PortionOutsideFace(LabError):
    pass


class MissingPortion(LabError):
    pass


class GridMisaligned(LabError):
    pass


class OutsideDomain(LabError):
    pass


class SlabTooThin(LabError):
    pass


class FootprintMismatch(LabError):
    pass


class OffsetOutOfRange(LabError):
    pass


# coefficients
class LayerMismatch(LabError):
    pass


class AnisotropyMismatch(LabError):
    pass


# discretisation and solvers
class ResolutionIncompatible(LabError):
    pass


class SingularSystem(LabError):
    pass


class ToleranceNotMet(LabError):
    pass


class NotASolution(LabError):
    pass


# kernels
class CoincidentPoints(LabError):
    pass


class NotSPD(LabError):
    pass


class OnInterface(LabError):
    pass


# Green functions
class PoleOutsideRegion(LabError):
    pass


class LadderTooFine(LabError):
    pass


# boundary operators
class EigSolveFailure(LabError):
    pass


class GramMismatch(LabError):
    pass


class UnsupportedTrace(LabError):
    pass


# probes
class PoleTooClose(LabError):
    pass


class GridOutsidePoleRegion(LabError):
    pass


class RadiiOrdering(LabError):
    pass


class BallOutsideDomain(LabError):
    pass


# experiments
class ParseError(LabError):
    pass


class ValidationError(LabError):
    """Configuration rejected; ``clause`` names the violated condition."""

    def __init__(self, clause, detail=""):
        self.clause = clause
        self.detail = detail
        msg = clause if not detail else f"{clause}: {detail}"
        super().__init__(msg)


class SamplingExhausted(LabError):
    pass


class IoError(LabError):
    pass
