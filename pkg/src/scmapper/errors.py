class ScMapperError(Exception):
    """Base class for library errors."""


class ParameterError(ScMapperError, ValueError):
    """Invalid argument or configuration value."""


class NumericError(ScMapperError, ArithmeticError):
    """A numerical routine left its validity range or failed to converge."""


class BracketError(NumericError):
    """A root bracket does not contain the requested target."""
