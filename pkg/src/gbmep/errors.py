"""Exception hierarchy shared by all modules."""


class GbmepError(Exception):
    pass


class RegistryError(GbmepError, KeyError):
    """Unknown node or station identifier."""

    def __str__(self):
        return Exception.__str__(self)


class DomainError(GbmepError, ValueError):
    """Parameters outside the valid set (e.g. lambda <= 0 or alpha >= beta)."""


class NumericalError(GbmepError, ArithmeticError):
    """Non-finite value produced during likelihood accumulation."""

    def __init__(self, message, node=None):
        super().__init__(message if node is None else f"node {node}: {message}")
        self.node = node


class InvariantError(GbmepError, RuntimeError):
    """Internal invariant breach, e.g. out-of-order event times in a recursion."""


class SchemaError(GbmepError, ValueError):
    """Missing or malformed input columns."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class IngestError(GbmepError, ValueError):
    pass


class SimulationError(GbmepError, RuntimeError):
    """Simulation aborted, typically because the event cap was reached."""
