"""Exception hierarchy shared across the package."""


class IrpSimError(Exception):
    """Base class for all errors raised by irpsim."""


class FormatError(IrpSimError):
    """Malformed trace, census, model, or config input."""


class DataError(IrpSimError):
    """Structurally valid input that violates a semantic precondition."""
