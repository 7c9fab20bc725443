"""Exception types shared across the package."""


class GSBHError(Exception):
    """Base class for all package errors."""


class ShapeError(GSBHError, ValueError):
    pass


class ContractError(GSBHError, RuntimeError):
    """A documented precondition was violated by the caller."""


class ConfigError(GSBHError, ValueError):
    pass


class FormatError(GSBHError, ValueError):
    """A binary file (dataset or checkpoint) could not be decoded."""

    def __init__(self, message, offset=None):
        self.detail = message
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
