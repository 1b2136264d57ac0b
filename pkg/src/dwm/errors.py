"""Shared error types.

ConfigError marks bad user-supplied configuration (CLI exit code 2);
everything else surfaces as ordinary ValueError/RuntimeError.
"""


class ConfigError(ValueError):
    """Invalid configuration value or incompatible settings."""
