"""Error taxonomy shared across the engine.

InputError maps to CLI exit code 2, BackendError/ProtocolError to 3.
"""


class StreamMemError(Exception):
    """Base class for all engine errors."""


class InputError(StreamMemError):
    """Malformed or inconsistent caller input (bad shapes, bad trace, ...)."""


class BackendError(StreamMemError):
    """A model port (stub or remote) failed to produce a result."""

    def __init__(self, message, endpoint=None, attempts=None, span=None):
        super().__init__(message)
        self.endpoint = endpoint
        self.attempts = attempts
        self.span = span


class ProtocolError(BackendError):
    """A remote backend answered with a malformed payload."""
