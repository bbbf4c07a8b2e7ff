"""Exception hierarchy shared by all hubplatoon modules."""


class PlatoonError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(PlatoonError, ValueError):
    pass


class NoRouteError(PlatoonError):
    pass


class InfeasibleError(PlatoonError):
    """A schedule or instance cannot meet its delivery deadline."""


class ResourceLimitError(PlatoonError):
    """Enumeration would exceed the configured combination guard."""


class InvalidStateError(PlatoonError):
    pass


class InternalConsistencyError(PlatoonError, AssertionError):
    """An internal invariant was broken; indicates a bug, not bad input."""
