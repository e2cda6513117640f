class BackendError(Exception):
    """An agent backend could not produce an answer."""

    def __init__(self, message, role=None):
        super().__init__(message)
        self.role = role


class BackendTimeout(BackendError):
    pass


class TransportError(BackendError):
    pass


class MalformedOutput(BackendError):
    """The backend answered, but not in the structure the role expects."""
