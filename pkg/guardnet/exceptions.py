"""Error hierarchy shared by every layer of the simulator."""
from typing import Dict, Optional, Type


class GuardError(Exception):
    """Base class for every error raised by guardnet."""


class EncodingError(GuardError):
    pass


class ParamError(GuardError):
    pass


class ShareError(GuardError):
    pass


class CombineError(GuardError):
    pass


class TableError(GuardError):
    pass


class JoinError(GuardError):
    pass


class ProofError(GuardError):
    """Table proof could not be completed; `missing` lists (level, side) pairs."""

    def __init__(self, message: str, missing=None):
        super().__init__(message)
        self.missing = list(missing or [])


class DroppedQuery(GuardError):
    pass


class BindingError(GuardError):
    pass


class AuthError(GuardError):
    pass


class UnknownIdentity(GuardError):
    pass


class ProofRejected(GuardError):
    pass


class WrongSubject(GuardError):
    pass


class CosignRefused(GuardError):
    pass


class CosignTimeout(GuardError):
    pass


class AuthSearchFailed(GuardError):
    def __init__(self, message: str, hop_index: Optional[int] = None):
        super().__init__(message)
        self.hop_index = hop_index


class QueryRejected(GuardError):
    def __init__(self, message: str, hop_index: Optional[int] = None, reason: Optional[str] = None):
        super().__init__(message)
        self.hop_index = hop_index
        self.reason = reason


class AddressInUse(GuardError):
    pass


class Undeliverable(GuardError):
    pass


class TransportTimeout(GuardError, TimeoutError):
    pass


class ConfigError(GuardError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class PhaseError(GuardError):
    def __init__(self, node: str, phase: str, message: str = ""):
        super().__init__(f"node {node} failed phase {phase}: {message}".rstrip(": "))
        self.node = node
        self.phase = phase


class SchemaError(GuardError):
    pass


class RemoteError(GuardError):
    """A remote handler failed with an error class this side does not know."""


_REMOTE_ERRORS: Dict[str, Type[GuardError]] = {
    cls.__name__: cls
    for cls in (
        EncodingError, ParamError, ShareError, CombineError, TableError, JoinError,
        DroppedQuery, BindingError, AuthError, UnknownIdentity, ProofRejected,
        WrongSubject, CosignRefused, CosignTimeout, Undeliverable, SchemaError,
        ProofError, AuthSearchFailed, QueryRejected, AddressInUse, TransportTimeout,
    )
}


def remote_error(name: str, detail: str) -> GuardError:
    """Rebuild an error that crossed the wire as (class name, message)."""
    cls = _REMOTE_ERRORS.get(name)
    if cls is None:
        return RemoteError(f"{name}: {detail}")
    return cls(detail)
