"""Exception hierarchy shared by the library and mapped to CLI exit codes."""


class WellApproxError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(WellApproxError, ValueError):
    exit_code = 2


class UnsupportedInstanceError(WellApproxError):
    """The approximation rule gives no usable enumeration radius."""

    exit_code = 3


class DegenerateScaleError(WellApproxError):
    """Q'(M) is empty, so F_M is undefined."""

    exit_code = 4


class SearchCapExceeded(WellApproxError):
    """No admissible scale passed before the search cap."""

    exit_code = 5

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class OracleMismatch(WellApproxError):
    exit_code = 6


class InfiniteSetError(WellApproxError, ValueError):
    """Raised for D(0), which is all of Z^n."""
