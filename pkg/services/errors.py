"""
Exception hierarchy shared by the services. The CLI maps each family to an
exit code (see controller/cli.py).
"""

import logging

logger = logging.getLogger(__name__)


class FodsError(Exception):
    """Base class for every error raised by the services."""


class ConfigurationError(FodsError):
    """Invalid model, parameter or experiment configuration."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class ConfigParseError(ConfigurationError):
    """The experiment file could not be parsed."""

    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"{message} (line {line}, column {column})")


class DesignError(FodsError):
    """A gain design is impossible for the given pair."""

    def __init__(self, message: str, modes=()):
        self.modes = list(modes)
        if self.modes:
            listed = ", ".join(f"{complex(m):.6g}" for m in self.modes)
            message = f"{message} (modes: {listed})"
        super().__init__(message)


class NumericError(FodsError):
    """Non-finite results or solver failures."""


class NumericOverflowError(NumericError):
    """A recursion produced a non-finite value."""

    def __init__(self, step: int, what: str = "state"):
        self.step = step
        super().__init__(f"non-finite {what} at step {step}")


class DegenerateProblemError(NumericError):
    """Rank-deficient least-squares problem with no regularization."""


logger.debug("services/errors.py module loaded.")
