"""Exception hierarchy shared by every subsystem.

Each class carries a short ``code`` used on the control protocol and for
CLI exit statuses.
"""

from __future__ import annotations


class DdashError(Exception):
    code = "error"
    exit_status = 1


class ValidationError(DdashError, ValueError):
    code = "validation"
    exit_status = 5


class PersistenceError(DdashError, OSError):
    code = "persistence"
    exit_status = 6


class NotFoundError(DdashError, KeyError):
    code = "not-found"
    exit_status = 4

    def __str__(self) -> str:
        # KeyError quotes its argument; keep plain messages.
        return Exception.__str__(self)


class CorruptionError(DdashError):
    code = "corruption"
    exit_status = 7


class TamperError(DdashError):
    """AEAD authentication failed or the container bytes are malformed."""

    code = "tamper"
    exit_status = 8


class NotARecipientError(DdashError):
    code = "not-a-recipient"
    exit_status = 9


class UnavailableError(DdashError):
    code = "unavailable"
    exit_status = 10


class ProtocolError(DdashError):
    code = "protocol"
    exit_status = 11


class GenesisMismatchError(DdashError):
    code = "genesis-mismatch"
    exit_status = 12


class ConfigError(DdashError):
    code = "config"
    exit_status = 13


ERROR_CLASSES = {
    cls.code: cls
    for cls in (
        DdashError,
        ValidationError,
        PersistenceError,
        NotFoundError,
        CorruptionError,
        TamperError,
        NotARecipientError,
        UnavailableError,
        ProtocolError,
        GenesisMismatchError,
        ConfigError,
    )
}
