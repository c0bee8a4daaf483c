"""Exception hierarchy shared across the memory substrate."""

from __future__ import annotations


class MemgovError(Exception):
    """Base class for every error raised by this package."""


class StorageFailure(MemgovError):
    """A ledger or snapshot write could not be made durable, or a file was unreadable."""


class UnknownSource(MemgovError):
    """The source has no registered provenance key."""


class RangeOutOfBounds(MemgovError):
    pass


class InvalidOrigin(MemgovError):
    """Origin ledger sequence numbers do not exist in the ledger."""


class UnknownIdx(MemgovError):
    pass


class InvalidConfig(MemgovError):
    pass


class OracleFailure(MemgovError):
    """The pluggable contradiction oracle raised."""


class ChainInvalid(MemgovError):
    """Refusing to act on a ledger whose hash chain does not verify."""

    def __init__(self, first_bad_seq: int | None):
        super().__init__(f"ledger chain invalid at seq {first_bad_seq}")
        self.first_bad_seq = first_bad_seq


class MalformedRequest(MemgovError):
    pass


class BindFailure(MemgovError):
    pass
