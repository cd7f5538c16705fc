"""Exception hierarchy shared by every module."""


class WlanSliceError(Exception):
    """Base class for all package errors."""


class ConfigurationError(WlanSliceError, ValueError):
    """A network, scenario or controller description is inconsistent."""


class EnumerationCapError(WlanSliceError):
    """Exact independent-set enumeration refused; use ``greedy_cover``."""


class ReportRejected(WlanSliceError, ValueError):
    """A scan report failed validation and was not ingested."""


class CalibrationError(WlanSliceError):
    """No usable scenario to derive a beacon-ratio threshold from."""


class SolverError(WlanSliceError):
    """The allocation problem is malformed or could not be solved."""


class ScheduleError(WlanSliceError, ValueError):
    """A schedule cannot be built from the given inputs."""
