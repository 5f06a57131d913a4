"""Exception types shared across the package."""


class NcdrecError(Exception):
    """Base class for all errors raised by this package."""


class DataError(NcdrecError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """A line of an input file could not be parsed."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class ModelAssumptionError(DataError):
    """The data violates a model assumption (e.g. a user or item with no ratings)."""


class CoverError(DataError):
    """The decomposition blocks do not cover the item set."""


class ParameterError(NcdrecError, ValueError):
    """A configuration parameter is outside its valid range."""


class ConvergenceError(NcdrecError):
    """An iteration failed to reach its tolerance.

    ``residuals`` carries the best residuals achieved (per singular triplet
    for the SVD engine, per batch row for the cold-start solver).
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class DisconnectedGraphError(NcdrecError):
    """An operation required a connected graph; ``components`` lists the pieces."""

    def __init__(self, message, components=None):
        super().__init__(message)
        self.components = components


class SizeGuardError(NcdrecError):
    """A dense baseline computation was refused because the graph is too large."""
