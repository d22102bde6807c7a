"""Exception hierarchy shared by every module of the package."""


class DchaError(Exception):
    """Base class for expected, reportable failures."""


class DimensionError(DchaError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class BackwardError(DchaError, RuntimeError):
    """Reverse pass requested on an invalid or already-consumed graph."""


class WindowError(DchaError, ValueError):
    """Unsupported sliding-window geometry."""


class ConfigError(DchaError, ValueError):
    """Inconsistent or malformed configuration.

    ``line`` carries the 1-based line number when the error came from a
    config file.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownKeyError(ConfigError):
    pass


class MalformedValueError(ConfigError):
    pass


class PhantomError(DchaError, RuntimeError):
    """Phantom generation could not satisfy its geometric constraints."""


class PreprocessError(DchaError, RuntimeError):
    """An image could not be cleaned, fitted or aligned."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class NonFiniteError(DchaError, FloatingPointError):
    """A gradient or loss became NaN/inf during optimization."""


class LabelError(DchaError, ValueError):
    """Labels are outside {0, 1} or a required class is missing."""


class CheckpointError(DchaError, IOError):
    """Checkpoint file missing, truncated, or of an unknown format."""
