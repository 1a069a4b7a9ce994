"""Exception hierarchy shared by every layer of the framework."""

from __future__ import annotations


class EithneError(Exception):
    """Base class for all framework errors."""


# -- wire ---------------------------------------------------------------------

class WireError(EithneError):
    pass


class EncodeError(WireError):
    pass


class DecodeError(WireError):
    pass


class BadMagicError(DecodeError):
    pass


class UnknownMessageTypeError(DecodeError):
    pass


class TruncatedFrameError(DecodeError):
    pass


class MalformedFrameError(DecodeError):
    pass


class TransportError(EithneError):
    """Raised when the byte stream fails. ``bytes_read`` counts the bytes of
    the interrupted read that did arrive."""

    def __init__(self, message: str, bytes_read: int = 0):
        super().__init__(message)
        self.bytes_read = bytes_read


class ConnectionClosedError(TransportError):
    pass


class TransportTimeoutError(TransportError):
    pass


# -- registry -----------------------------------------------------------------

class RegistrationError(EithneError):
    pass


class InvalidLengthError(RegistrationError):
    pass


class KindMismatchError(RegistrationError):
    pass


class UnknownVariableError(EithneError):
    pass


class PayloadSizeError(EithneError):
    pass


# -- device -------------------------------------------------------------------

class MemoryBudgetError(EithneError):
    """A registration set does not fit the scratchpad of a core."""

    def __init__(self, registration: str, overflow_bytes: int, budget_bytes: int):
        super().__init__(
            f"registration {registration!r} exceeds the {budget_bytes} B scratchpad "
            f"by {overflow_bytes} B"
        )
        self.registration = registration
        self.overflow_bytes = overflow_bytes
        self.budget_bytes = budget_bytes


class SpawnError(EithneError):
    pass


# -- host ---------------------------------------------------------------------

class DeviceError(EithneError):
    """The device answered with an ERROR frame."""

    def __init__(self, code: int, object_id: int, context: str = ""):
        from eithne.wire import ErrorCode

        try:
            name = ErrorCode(code).name
        except ValueError:
            name = f"code {code}"
        msg = f"device error {name} (object {object_id})"
        if context:
            msg = f"{context}: {msg}"
        super().__init__(msg)
        self.code = code
        self.object_id = object_id


class ExecutionError(DeviceError):
    pass


class DeviceBudgetError(DeviceError):
    """The device refused data or a program because it would not fit."""


class ProtocolError(EithneError):
    pass


class HandshakeError(ProtocolError):
    pass


class InvalidSizeError(EithneError):
    pass


class InvalidTimingError(EithneError):
    pass


# -- metrics ------------------------------------------------------------------

class InvalidRecordError(EithneError):
    pass


class ReportAssemblyError(EithneError):
    pass


class ConfigError(EithneError):
    pass
