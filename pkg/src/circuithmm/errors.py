"""Exception hierarchy.

Errors are grouped so the CLI can map them onto exit codes: ``DataError``
subclasses exit with 3, ``NumericalError`` subclasses with 4.
"""


class CircuitHMMError(Exception):
    """Base class for all package errors."""


class DataError(CircuitHMMError, ValueError):
    """Input data violates a structural contract."""


class NumericalError(CircuitHMMError, ArithmeticError):
    """A numerical routine could not produce a valid result."""


# graph construction
class GraphError(DataError):
    pass


class DisconnectedGraph(GraphError):
    pass


class DuplicateEdge(GraphError):
    pass


class NonpositiveConductance(GraphError):
    pass


class UnknownNode(GraphError):
    pass


class CoincidentCentroids(GraphError):
    pass


class OverlappingTerminals(GraphError):
    pass


class EmptyTerminalSet(GraphError):
    pass


# linear algebra
class IllConditioned(NumericalError):
    pass


class SolveFailed(NumericalError):
    pass


class DivideByZero(NumericalError):
    pass


class DegenerateMean(NumericalError):
    pass


# model / data contracts
class InvalidInput(DataError):
    pass


class InvariantViolation(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvalidConfig(CircuitHMMError, ValueError):
    pass


class InsufficientDraws(CircuitHMMError, ValueError):
    pass
