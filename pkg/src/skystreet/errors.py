"""Pipeline-level exception types and their CLI exit codes."""


class SkystreetError(Exception):
    """Base class for pipeline failures with a defined exit code."""

    exit_code = 1


class ConfigError(SkystreetError):
    """Invalid or inconsistent configuration (bad field, unknown key, bad range)."""

    exit_code = 2


class DataError(SkystreetError):
    """Missing, malformed, or mutually inconsistent input data."""

    exit_code = 3


class NumericError(SkystreetError):
    """Numeric failure mid-computation (non-finite loss, diverged sampler)."""

    exit_code = 4
