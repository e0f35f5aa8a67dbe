class TierFLError(Exception):
    """Base class for library errors."""


class ConfigError(TierFLError):
    """Invalid configuration. ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class DomainError(TierFLError, ValueError):
    """An operation was called outside its domain."""
