"""Exception taxonomy shared across the package.

Each class maps to a distinct process exit code in the command-line
front end, so scripted callers can tell configuration mistakes, bad
input data, and internal training failures apart.
"""


class ProbeBenchError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(ProbeBenchError):
    """Invalid configuration (bad key, bad value, missing required field)."""

    exit_code = 2


class DataError(ProbeBenchError):
    """Invalid input data (unreadable file, malformed row, failed validation)."""

    exit_code = 3


class ProbeFailure(ProbeBenchError):
    """A probe failed to train or produced non-finite outputs."""

    exit_code = 4
