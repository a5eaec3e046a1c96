"""
Exception hierarchy.
Every error carries the process exit code the CLI reports for it.
"""
from typing import Optional


class ParafactError(Exception):
    exit_code = 3


class InputError(ParafactError):
    """Malformed expression, equation, map or lattice input."""
    exit_code = 3


class ParseError(InputError):
    def __init__(self, message: str, position: Optional[int] = None, text: Optional[str] = None):
        self.position = position
        self.text = text
        if position is not None:
            message = f"{message} at position {position}"
        super().__init__(message)


class UnknownIdentifierError(ParseError):
    pass


class ArityError(ParseError):
    pass


class LoadError(InputError):
    def __init__(self, message: str, path: Optional[str] = None,
                 line: Optional[int] = None, column: Optional[int] = None):
        self.path = path
        self.line = line
        self.column = column
        where = path or "<text>"
        if line is not None:
            where = f"{where}:{line}"
            if column is not None:
                where = f"{where}:{column}"
        super().__init__(f"{where}: {message}")


class EvaluationError(ParafactError):
    pass


class UnboundVariableError(EvaluationError):
    pass


class SingularEvaluationError(EvaluationError):
    pass


class DifferentiationError(ParafactError):
    """Derivative order beyond the evaluators registered for an opaque function."""


class DomainError(ParafactError):
    """Empty or unsampleable domain."""


class InconclusiveError(ParafactError):
    exit_code = 2


class NewtonError(ParafactError):
    exit_code = 2


class FlowError(ParafactError):
    exit_code = 2


class GeometryError(ParafactError):
    pass


class NormalizationError(ParafactError):
    exit_code = 1


class LatticeError(ParafactError):
    pass
