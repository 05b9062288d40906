"""Exception hierarchy.

The CLI maps each top-level class onto its own exit code, so library code
should raise the most specific subclass available.
"""


class ArcticDuctError(Exception):
    """Base class for all package errors."""


class ConfigError(ArcticDuctError, ValueError):
    """Invalid configuration, parameters or grids."""


class ParseError(ArcticDuctError, ValueError):
    """Malformed input file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class NumericalError(ArcticDuctError, RuntimeError):
    """A numerical routine could not produce a valid answer."""


class ExtractionError(ArcticDuctError, RuntimeError):
    """Dispersion curve extraction or matching failed."""


class InvalidParamsError(ConfigError):
    pass


class OutOfRangeError(ConfigError):
    pass


class CoverageError(ConfigError):
    pass


class ResolutionError(NumericalError):
    pass


class WindowError(NumericalError):
    pass


class InsufficientOverlapError(ExtractionError):
    pass
