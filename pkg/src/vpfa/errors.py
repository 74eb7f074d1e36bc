"""Exception types shared across the toolkit."""


class VpfaError(Exception):
    """Base class for all toolkit errors."""


class FormatError(VpfaError):
    """A file could not be parsed or written in the requested format."""


class DataError(VpfaError):
    """The data does not satisfy an operation's preconditions."""
