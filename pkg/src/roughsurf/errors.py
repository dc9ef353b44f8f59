"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Invalid boundary geometry."""


class ConfigurationError(ValueError):
    """Invalid numerical or run configuration."""


class NumericalError(RuntimeError):
    """A linear solve or iteration failed."""


class StateError(RuntimeError):
    """An operation needs data that was not retained."""
