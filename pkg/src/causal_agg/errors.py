"""Exception hierarchy.

Validation errors signal bad input (CLI exit code 2); numerical errors signal
a solve that could not be carried out on otherwise valid input (exit code 3).
"""


class CausalAggError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(CausalAggError, ValueError):
    pass


class NumericalError(CausalAggError, ArithmeticError):
    pass


# model construction and interventions
class CyclicGraph(ValidationError):
    pass


class BadIndex(ValidationError):
    pass


class ResponseIntervention(ValidationError):
    pass


class OverlapError(ValidationError):
    pass


class UnknownPreset(ValidationError):
    pass


# constraints
class NotRandomized(ValidationError):
    pass


class NotShifted(ValidationError):
    pass


class MissingColumn(ValidationError):
    pass


class SampleReuse(ValidationError):
    pass


class RandomizedTarget(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class SingularDesign(NumericalError):
    pass


# linear estimation
class NotSquare(ValidationError):
    pass


class Underidentified(ValidationError):
    def __init__(self, message, diagnosis=None):
        super().__init__(message)
        self.diagnosis = diagnosis


class SingularG(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class NonPDWeight(NumericalError):
    pass


class DegenerateConstraint(NumericalError):
    pass


# sparse estimation
class Infeasible(NumericalError):
    pass


class IterationLimit(NumericalError):
    pass


class TooLarge(ValidationError):
    pass


class ScreeningEmpty(ValidationError):
    pass


# boosting
class TooFewSamples(ValidationError):
    pass


class NoRandomizedFeatures(ValidationError):
    pass


# ingestion / harness
class SchemaMismatch(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class EmptyEnvironment(ValidationError):
    pass


class GroupCoverageError(ValidationError):
    pass
