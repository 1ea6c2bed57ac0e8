"""Shared exception types.

ValidationError covers bad inputs (malformed files, schema violations,
incompatible shapes); ConfigError covers bad settings. The CLI maps the
former two to exit code 1 and any other failure to exit code 2.
"""


class ValidationError(ValueError):
    """Input data violates a documented contract."""


class ConfigError(ValidationError):
    """A configuration value is out of range or inconsistent."""
