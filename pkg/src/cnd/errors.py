"""Exception types shared across the package."""


class CNDError(Exception):
    """Base class for all package errors."""


class InputError(CNDError, ValueError):
    """Invalid argument: out-of-range vertex, bad parameter, unresolvable reference."""


class ResourceError(CNDError):
    """A resource guard (atom count, replication budget) was exceeded."""


class SchemaError(CNDError):
    """An experiment configuration failed validation."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
