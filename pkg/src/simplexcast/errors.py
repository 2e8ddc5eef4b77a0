"""Exception types shared across the package."""


class SimplexCastError(Exception):
    """Base class for all package-specific errors."""


class AllZeroMass(SimplexCastError):
    pass


class NegativeMass(SimplexCastError):
    pass


class DimensionMismatch(SimplexCastError):
    pass


class ZeroComponent(SimplexCastError):
    pass


class WeightSumInvalid(SimplexCastError):
    pass


class EmptyPrefix(SimplexCastError):
    pass


class EmptyBatch(SimplexCastError):
    pass


class NonFiniteGradient(SimplexCastError):
    pass


class DivergedTraining(SimplexCastError):
    pass


class EmptyBank(SimplexCastError):
    pass


class InsufficientData(SimplexCastError):
    pass


class ConfigUtilizationOutOfBand(SimplexCastError):
    pass


class RejectionBudgetExceeded(SimplexCastError):
    pass


class TooFewSystems(SimplexCastError):
    pass


class NoScoredPositions(SimplexCastError):
    pass


class NoEligibleSequences(SimplexCastError):
    pass


class TooFewSequences(SimplexCastError):
    pass


class OptimizationNotConverged(SimplexCastError):
    pass


class ParseError(SimplexCastError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class SchemaVersionMismatch(SimplexCastError):
    pass
