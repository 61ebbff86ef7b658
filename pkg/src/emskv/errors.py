"""Exception hierarchy shared across the package."""


class EMSError(Exception):
    """Base class for all errors raised by emskv."""


class InvalidArgumentError(EMSError, ValueError):
    pass


class DegenerateInputError(EMSError, ValueError):
    """Input is well-formed but mathematically degenerate (zero norm, zero mass)."""


class ConfigError(EMSError, ValueError):
    pass


class StateError(EMSError, RuntimeError):
    """Operation called on a cache or score state that was never initialized."""


class CorruptionError(EMSError, RuntimeError):
    """A look-up-table entry references a slot that does not exist."""


class TraceFormatError(EMSError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DegenerateTokenWarning(UserWarning):
    """A zero-norm token was encountered; its similarities are taken as 0."""
