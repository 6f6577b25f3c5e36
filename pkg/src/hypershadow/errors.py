"""Exception hierarchy shared by all modules.

Every error carries an ``exit_code`` so the command line front end can map a
failure to a process status without inspecting message text.
"""


class HypershadowError(Exception):
    """Base class; ``details`` holds the structured record emitted by the CLI."""

    exit_code = 3

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_record(self):
        return {"error": type(self).__name__, "message": str(self), **self.details}


class DimensionError(HypershadowError, ValueError):
    pass


class ValidationError(HypershadowError, ValueError):
    pass


class NumericError(HypershadowError, ArithmeticError):
    pass


class PreconditionError(HypershadowError, ValueError):
    exit_code = 4


class DegenerateSplittingError(NumericError):
    pass


class GradeTooCoarseError(PreconditionError):
    pass


class CertificateError(NumericError):
    pass


class PseudoOrbitTooFarError(NumericError):
    """Approximate inverse failed its defect budget.

    ``violated_terms`` lists the a-priori error budget terms that exceed 1/8.
    """

    def __init__(self, message, violated_terms=(), **details):
        super().__init__(message, violated_terms=list(violated_terms), **details)
        self.violated_terms = list(violated_terms)


class ContractionViolatedError(NumericError):
    pass


class RadiusViolationError(NumericError):
    pass


class FamilyConstructionError(NumericError):
    pass


class UsageError(HypershadowError):
    exit_code = 2
