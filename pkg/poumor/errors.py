"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PouMorError(Exception):
    exit_code = 1


class ValidationError(PouMorError, ValueError):
    exit_code = 2


class ShapeError(ValidationError):
    """Operand shapes or channel counts do not agree."""


class ConfigError(ValidationError):
    """Unknown config section/key or a value out of range."""


class TapeError(ValidationError):
    """Misuse of the differentiation tape."""


class NumericalError(PouMorError, ArithmeticError):
    exit_code = 3


class NonFiniteError(NumericalError):
    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class ConvergenceError(NumericalError):
    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


class NyquistError(NumericalError):
    """Grid too coarse for the requested frequency content."""


class InstabilityError(NumericalError):
    """Explicit time stepping blew up."""


class FieldFormatError(PouMorError, ValueError):
    exit_code = 4
