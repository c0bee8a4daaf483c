"""Append-only, hash-chained, file-backed episodic ledger.

Each entry is one line of compact UTF-8 JSON. The entry hash is SHA-256 over a
length-prefixed encoding of the entry fields plus the previous hash; the
provenance tag is HMAC-SHA-256 of the entry hash under the source's key.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import os
import secrets
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import ChainInvalid, RangeOutOfBounds, StorageFailure, UnknownSource

logger = logging.getLogger(__name__)

GENESIS_HASH = bytes(32)
RECORD_KEYS = ("seq", "ts", "src", "kind", "content", "slots", "scope", "meta", "prev", "hash", "tag")

# Entry kinds. Observations mirror admitted writes; the rest are audit records.
KIND_ADD = "add"
KIND_UPDATE = "update"
KIND_DELETE = "delete"
KIND_ARCHIVE = "archive"
KIND_REJECTION = "rejection"
KIND_REVERT = "revert"
OBSERVATION_KINDS = frozenset({KIND_ADD, KIND_UPDATE, KIND_DELETE})
ENTRY_KINDS = frozenset({KIND_ADD, KIND_UPDATE, KIND_DELETE, KIND_ARCHIVE, KIND_REJECTION, KIND_REVERT})

Slot = tuple[str, str, str]


def normalize_slots(slots: Iterable[Sequence[str]] | None) -> tuple[Slot, ...]:
    out = []
    for triple in slots or ():
        if len(triple) != 3 or not all(isinstance(x, str) for x in triple):
            raise ValueError(f"slot must be a (subject, attribute, value) string triple: {triple!r}")
        out.append((triple[0], triple[1], triple[2]))
    return tuple(out)


def _canon_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _lp(data: bytes) -> bytes:
    return struct.pack(">Q", len(data)) + data


def entry_digest(
    seq: int,
    timestamp: int,
    source_id: str,
    kind: str,
    content: str,
    slots: Sequence[Slot],
    scope: str,
    meta: Mapping[str, Any],
    prev_hash: bytes,
) -> bytes:
    h = hashlib.sha256()
    h.update(struct.pack(">qq", seq, timestamp))
    for s in (source_id, kind, content):
        h.update(_lp(s.encode("utf-8")))
    h.update(struct.pack(">Q", len(slots)))
    for triple in slots:
        for s in triple:
            h.update(_lp(s.encode("utf-8")))
    h.update(_lp(scope.encode("utf-8")))
    h.update(_lp(_canon_json(dict(meta)).encode("utf-8")))
    h.update(_lp(prev_hash))
    return h.digest()


@dataclass(frozen=True)
class LedgerEntry:
    seq: int
    timestamp: int
    source_id: str
    content: str
    slots: tuple[Slot, ...]
    scope: str
    prev_hash: bytes
    entry_hash: bytes
    provenance_tag: bytes
    kind: str = KIND_ADD
    meta: Mapping[str, Any] = field(default_factory=dict)

    def computed_hash(self) -> bytes:
        return entry_digest(
            self.seq, self.timestamp, self.source_id, self.kind, self.content,
            self.slots, self.scope, self.meta, self.prev_hash,
        )

    def to_record(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "ts": self.timestamp,
            "src": self.source_id,
            "kind": self.kind,
            "content": self.content,
            "slots": [list(t) for t in self.slots],
            "scope": self.scope,
            "meta": dict(self.meta),
            "prev": self.prev_hash.hex(),
            "hash": self.entry_hash.hex(),
            "tag": self.provenance_tag.hex(),
        }

    def to_line(self) -> bytes:
        return (json.dumps(self.to_record(), separators=(",", ":"), ensure_ascii=False) + "\n").encode("utf-8")

    @classmethod
    def from_line(cls, raw: bytes) -> "LedgerEntry":
        """Parse one line (without its newline). Raises ValueError unless the
        line is exactly the canonical serialisation of the parsed record."""
        rec = json.loads(raw.decode("utf-8"))
        if not isinstance(rec, dict) or tuple(rec) != RECORD_KEYS:
            raise ValueError("unexpected record keys")
        for key in ("seq", "ts"):
            if type(rec[key]) is not int:
                raise ValueError(f"{key} must be an integer")
        for key in ("src", "kind", "content", "scope", "prev", "hash", "tag"):
            if not isinstance(rec[key], str):
                raise ValueError(f"{key} must be a string")
        if not isinstance(rec["meta"], dict) or not isinstance(rec["slots"], list):
            raise ValueError("bad meta or slots")
        for key in ("prev", "hash", "tag"):
            if rec[key] != rec[key].lower():
                raise ValueError("hex fields must be lowercase")
        entry = cls(
            seq=rec["seq"],
            timestamp=rec["ts"],
            source_id=rec["src"],
            content=rec["content"],
            slots=normalize_slots(rec["slots"]),
            scope=rec["scope"],
            prev_hash=bytes.fromhex(rec["prev"]),
            entry_hash=bytes.fromhex(rec["hash"]),
            provenance_tag=bytes.fromhex(rec["tag"]),
            kind=rec["kind"],
            meta=rec["meta"],
        )
        if entry.to_line() != raw + b"\n":
            raise ValueError("record is not in canonical form")
        return entry


class Keyring:
    """Per-source HMAC keys, persisted as ``source_id<TAB>hex_key`` lines."""

    def __init__(self, keys: Mapping[str, bytes] | None = None, path: str | os.PathLike | None = None):
        self._keys: dict[str, bytes] = dict(keys or {})
        self.path = Path(path) if path is not None else None

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Keyring":
        path = Path(path)
        keys: dict[str, bytes] = {}
        if path.exists():
            try:
                text = path.read_text(encoding="utf-8")
            except OSError as exc:
                raise StorageFailure(f"cannot read keyring {path}: {exc}") from exc
            for lineno, line in enumerate(text.splitlines(), 1):
                if not line.strip() or line.startswith("#"):
                    continue
                try:
                    source, hexkey = line.split("\t")
                    keys[source] = bytes.fromhex(hexkey.strip())
                except ValueError as exc:
                    raise StorageFailure(f"{path}:{lineno}: malformed keyring line") from exc
        return cls(keys, path)

    def save(self) -> None:
        if self.path is None:
            return
        lines = "".join(f"{src}\t{key.hex()}\n" for src, key in sorted(self._keys.items()))
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        tmp.write_text(lines, encoding="utf-8")
        os.replace(tmp, self.path)

    def register(self, source_id: str, key: bytes | None = None) -> bytes:
        if not source_id or "\t" in source_id or "\n" in source_id:
            raise ValueError(f"invalid source id {source_id!r}")
        key = key if key is not None else secrets.token_bytes(32)
        self._keys[source_id] = key
        self.save()
        return key

    def key(self, source_id: str) -> bytes:
        try:
            return self._keys[source_id]
        except KeyError:
            raise UnknownSource(source_id) from None

    def __contains__(self, source_id: object) -> bool:
        return source_id in self._keys

    def sign(self, source_id: str, digest: bytes) -> bytes:
        return hmac.new(self.key(source_id), digest, hashlib.sha256).digest()

    def check(self, source_id: str, digest: bytes, tag: bytes) -> bool:
        key = self._keys.get(source_id)
        if key is None:
            return False
        return hmac.compare_digest(hmac.new(key, digest, hashlib.sha256).digest(), tag)


@dataclass(frozen=True)
class ChainReport:
    valid: bool
    first_bad_seq: int | None = None
    entries: int = 0
    detail: str = ""


def _check_entry(entry: LedgerEntry, position: int, prev: bytes, keyring: Keyring) -> str:
    if entry.seq != position:
        return f"seq {entry.seq} at position {position}"
    if entry.kind not in ENTRY_KINDS:
        return f"unknown kind {entry.kind!r}"
    if entry.prev_hash != prev:
        return "prev hash does not link"
    if entry.computed_hash() != entry.entry_hash:
        return "entry hash mismatch"
    if not keyring.check(entry.source_id, entry.entry_hash, entry.provenance_tag):
        return "provenance tag invalid"
    return ""


def verify_entries(entries: Sequence[LedgerEntry], keyring: Keyring) -> ChainReport:
    prev = GENESIS_HASH
    for pos, entry in enumerate(entries):
        problem = _check_entry(entry, pos, prev, keyring)
        if problem:
            return ChainReport(False, pos, len(entries), problem)
        prev = entry.entry_hash
    return ChainReport(True, None, len(entries))


def _split_lines(data: bytes) -> tuple[list[bytes], bool]:
    """Split into lines; the flag is True when the last line lacks its newline."""
    if not data:
        return [], False
    lines = data.split(b"\n")
    torn = lines[-1] != b""
    if not torn:
        lines.pop()
    return lines, torn


def verify_file(path: str | os.PathLike, keyring: Keyring) -> ChainReport:
    """Verify a ledger file from disk, independent of any in-memory copy."""
    path = Path(path)
    if not path.exists():
        return ChainReport(True, None, 0)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise StorageFailure(f"cannot read ledger {path}: {exc}") from exc
    lines, torn = _split_lines(data)
    prev = GENESIS_HASH
    for pos, raw in enumerate(lines):
        if torn and pos == len(lines) - 1:
            return ChainReport(False, pos, pos, "torn final record")
        try:
            entry = LedgerEntry.from_line(raw)
        except (ValueError, UnicodeDecodeError) as exc:
            return ChainReport(False, pos, pos, f"unparseable record: {exc}")
        problem = _check_entry(entry, pos, prev, keyring)
        if problem:
            return ChainReport(False, pos, pos, problem)
        prev = entry.entry_hash
    return ChainReport(True, None, len(lines))


class Ledger:
    """Single-writer append-only log. ``path=None`` keeps it in memory only."""

    def __init__(
        self,
        path: str | os.PathLike | None = None,
        keyring: Keyring | None = None,
        durable: bool = True,
    ):
        self.path = Path(path) if path is not None else None
        self.keyring = keyring if keyring is not None else Keyring()
        self.durable = durable
        self._entries: list[LedgerEntry] = []
        self._lock = threading.Lock()
        self._fh = None
        if self.path is not None:
            self._load()

    def _load(self) -> None:
        assert self.path is not None
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()
        try:
            data = self.path.read_bytes()
        except OSError as exc:
            raise StorageFailure(f"cannot read ledger {self.path}: {exc}") from exc
        lines, torn = _split_lines(data)
        if torn:
            # A record without its newline never finished its append; drop it.
            keep = len(data) - len(lines[-1])
            logger.warning("truncating torn final ledger record at byte %d", keep)
            with open(self.path, "r+b") as fh:
                fh.truncate(keep)
                fh.flush()
                os.fsync(fh.fileno())
            lines.pop()
        entries = []
        for pos, raw in enumerate(lines):
            try:
                entries.append(LedgerEntry.from_line(raw))
            except (ValueError, UnicodeDecodeError):
                raise ChainInvalid(pos) from None
        report = verify_entries(entries, self.keyring)
        if not report.valid:
            raise ChainInvalid(report.first_bad_seq)
        self._entries = entries
        self._fh = open(self.path, "ab")

    # --- reads -----------------------------------------------------------

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def last_seq(self) -> int:
        return len(self._entries) - 1

    @property
    def last_hash(self) -> bytes:
        entries = self._entries
        return entries[-1].entry_hash if entries else GENESIS_HASH

    def entry(self, seq: int) -> LedgerEntry:
        if not 0 <= seq < len(self._entries):
            raise RangeOutOfBounds(f"seq {seq} not in ledger of length {len(self._entries)}")
        return self._entries[seq]

    def entries(self) -> list[LedgerEntry]:
        return list(self._entries)

    def replay(self, from_seq: int, to_seq: int, scope_filter: str | None = None) -> list[LedgerEntry]:
        """Entries ``from_seq..to_seq`` inclusive, in seq order, optionally one scope only."""
        committed = self._entries[:]  # immutable prefix; no writer coordination needed
        last = len(committed) - 1
        if not committed and from_seq == 0 and to_seq == -1:
            return []
        if not (0 <= from_seq <= to_seq <= last):
            raise RangeOutOfBounds(f"replay({from_seq}, {to_seq}) outside 0..{last}")
        window = committed[from_seq : to_seq + 1]
        if scope_filter is None:
            return window
        return [e for e in window if e.scope == scope_filter]

    def verify_chain(self) -> ChainReport:
        if self.path is not None:
            with self._lock:
                return verify_file(self.path, self.keyring)
        return verify_entries(self._entries, self.keyring)

    # --- writes ----------------------------------------------------------

    def append(
        self,
        content: str,
        slots: Iterable[Sequence[str]] | None,
        source_id: str,
        scope: str,
        timestamp: int,
        kind: str = KIND_ADD,
        meta: Mapping[str, Any] | None = None,
    ) -> int:
        if kind not in ENTRY_KINDS:
            raise ValueError(f"unknown entry kind {kind!r}")
        if source_id not in self.keyring:
            raise UnknownSource(source_id)
        slots = normalize_slots(slots)
        meta = dict(meta or {})
        with self._lock:
            seq = len(self._entries)
            prev = self.last_hash
            digest = entry_digest(seq, timestamp, source_id, kind, content, slots, scope, meta, prev)
            entry = LedgerEntry(
                seq=seq, timestamp=timestamp, source_id=source_id, content=content,
                slots=slots, scope=scope, prev_hash=prev, entry_hash=digest,
                provenance_tag=self.keyring.sign(source_id, digest), kind=kind, meta=meta,
            )
            if self._fh is not None:
                self._write_durably(entry.to_line())
            self._entries.append(entry)
            return seq

    def _write_durably(self, line: bytes) -> None:
        fh = self._fh
        offset = fh.tell()
        try:
            fh.write(line)
            fh.flush()
            if self.durable:
                os.fsync(fh.fileno())
        except OSError as exc:
            try:
                fh.truncate(offset)
                fh.seek(offset)
                fh.flush()
            except OSError:
                logger.exception("could not roll back partial ledger write")
            raise StorageFailure(f"ledger append failed: {exc}") from exc

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.flush()
                if self.durable:
                    os.fsync(self._fh.fileno())
                self._fh.close()
                self._fh = None

    def __enter__(self) -> "Ledger":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
