"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A config file or CLI input is missing, malformed, or inconsistent."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values or otherwise diverged."""
