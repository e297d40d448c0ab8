"""Error hierarchy shared by the library and the CLI.

Library code raises; the CLI maps ``exit_code`` to the process status.
"""

INPUT_ERROR = 2
VALIDATION_ERROR = 3
RUNTIME_ERROR = 4
# a Monte-Carlo check ran but its report did not pass
CHECK_FAILED = 5


class LordbaError(Exception):
    exit_code: int = 1


# ---------- input (file formats) ----------

class FormatError(LordbaError):
    exit_code = INPUT_ERROR


class BadMagicError(FormatError):
    exit_code = 10


class UnsupportedVersionError(FormatError):
    exit_code = 11


class CrcMismatchError(FormatError):
    exit_code = 12


class TruncatedFileError(FormatError):
    exit_code = 13


class ShapeInconsistencyError(FormatError):
    exit_code = 14


# ---------- validation ----------

class ConfigError(LordbaError):
    """Parameter combination no command can run with."""

    exit_code = VALIDATION_ERROR


class ShapeMismatchError(LordbaError):
    exit_code = VALIDATION_ERROR


class DegenerateInputError(LordbaError):
    exit_code = VALIDATION_ERROR


class RegimeError(LordbaError):
    """Monte-Carlo model outside the regime a bound is stated for."""

    exit_code = VALIDATION_ERROR


# ---------- runtime ----------

class ConvergenceError(LordbaError):
    exit_code = RUNTIME_ERROR


class NonPositivePivotError(LordbaError):
    exit_code = RUNTIME_ERROR


class NonFiniteError(LordbaError):
    exit_code = RUNTIME_ERROR


class DivergenceError(LordbaError):
    exit_code = RUNTIME_ERROR
