"""Exception hierarchy shared across the package."""


class ParameterError(ValueError):
    """An argument violates an operation's contract."""


class CapacityError(ParameterError):
    """A hardware-derived limit was exceeded (mic count, device count, ...)."""


class GenerationError(RuntimeError):
    """A randomized generator exhausted its retry budget."""


class StateError(RuntimeError):
    """An operation was applied to an object in the wrong state."""


class FramingError(ValueError):
    """A serialized blob does not parse under its wire or file format."""


class MagicError(FramingError):
    """Unknown magic bytes."""


class VersionError(FramingError):
    """Unsupported format version."""


class LengthError(FramingError):
    """Truncated input or inconsistent length field."""


class CrcError(FramingError):
    """Checksum mismatch."""


class ClientError(RuntimeError):
    """A streaming client gave up after its reconnect budget."""
