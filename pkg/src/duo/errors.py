class DuoError(Exception):
    pass


class ConfigurationError(DuoError, ValueError):
    pass


class LayoutError(DuoError):
    """A batch or append does not extend the cache layout consistently."""


class CapacityError(DuoError):
    pass


class StateError(DuoError):
    """Operation not permitted in the current channel/session state."""


class TraceError(DuoError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
