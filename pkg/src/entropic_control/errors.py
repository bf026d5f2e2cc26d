"""Exception hierarchy shared by the solver modules."""


class EntropicControlError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(EntropicControlError):
    """A structural hypothesis on the control problem failed at a probe."""


class NonInvertibleDiffusion(ValidationError):
    pass


class NegativeCost(ValidationError):
    pass


class InvalidParams(ValidationError):
    pass


class NonFiniteState(EntropicControlError):
    pass


class DegenerateWeights(EntropicControlError):
    pass


class SingularRegression(EntropicControlError):
    pass


class NoConvergence(EntropicControlError):
    pass


class DomainEscape(EntropicControlError):
    pass


class ParseError(EntropicControlError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CoverageError(EntropicControlError):
    pass

