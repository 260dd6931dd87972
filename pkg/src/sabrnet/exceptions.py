"""Exception hierarchy shared across the package."""


class SabrNetError(Exception):
    """Base class for all package errors."""


class DomainError(SabrNetError, ValueError):
    """Input outside the domain an operation accepts."""


class NoSolutionError(SabrNetError, ValueError):
    """Option price outside the attainable Black-Scholes range."""


class ConvergenceError(SabrNetError, RuntimeError):
    """Iteration cap hit before the tolerance was met.

    ``best`` holds the last iterate.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class FormatError(SabrNetError, ValueError):
    """Corrupt or truncated file. ``offset`` is the byte position of the failure."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(FormatError):
    """File written by an incompatible format version."""


class ConfigError(SabrNetError, ValueError):
    """Invalid or unknown configuration."""


class TrainingError(SabrNetError, RuntimeError):
    """Training diverged. ``network`` holds the last finite state."""

    def __init__(self, message, network=None):
        super().__init__(message)
        self.network = network
