"""Mutable active memory: indexed units with exhaustive Top-K retrieval."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from . import kernels
from .embedding import DEFAULT_DIM, embed
from .errors import InvalidOrigin, StorageFailure, UnknownIdx
from .ledger import Slot, normalize_slots

if TYPE_CHECKING:
    from .ledger import Ledger


@dataclass
class MemoryUnit:
    idx: int
    content: str
    slots: tuple[Slot, ...]
    embedding: np.ndarray = field(repr=False)
    scope: str
    source_id: str
    created_at: int
    last_used_at: int
    origin_seqs: list[int]
    is_core: bool = False

    def to_record(self) -> dict:
        return {
            "idx": self.idx,
            "content": self.content,
            "slots": [list(t) for t in self.slots],
            "scope": self.scope,
            "source_id": self.source_id,
            "created_at": self.created_at,
            "last_used_at": self.last_used_at,
            "origin_seqs": list(self.origin_seqs),
            "is_core": self.is_core,
        }


class MemoryState:
    """The active store. Ledger-aware when ``ledger`` is given (origin checks)."""

    def __init__(self, ledger: "Ledger | None" = None, dim: int = DEFAULT_DIM, clock: int = 0):
        self.units: dict[int, MemoryUnit] = {}
        self.next_idx = 0
        self.clock = clock
        self.dim = dim
        self.ledger = ledger
        self._index: tuple[np.ndarray, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.units)

    def __contains__(self, idx: object) -> bool:
        return idx in self.units

    def get(self, idx: int) -> MemoryUnit:
        try:
            return self.units[idx]
        except KeyError:
            raise UnknownIdx(idx) from None

    def core_units(self) -> list[MemoryUnit]:
        return [u for u in self.ordered() if u.is_core]

    def ordered(self) -> list[MemoryUnit]:
        return [self.units[i] for i in sorted(self.units)]

    def contents(self) -> list[str]:
        return [u.content for u in self.ordered()]

    def _check_origins(self, origin_seqs: Sequence[int]) -> list[int]:
        origins = [int(s) for s in origin_seqs]
        if not origins:
            raise InvalidOrigin("origin_seqs must be nonempty")
        last = self.ledger.last_seq if self.ledger is not None else None
        for s in origins:
            if s < 0 or (last is not None and s > last):
                raise InvalidOrigin(f"origin seq {s} not in ledger (last seq {last})")
        return origins

    def insert(
        self,
        content: str,
        slots: Iterable[Sequence[str]] | None,
        scope: str,
        source_id: str,
        origin_seqs: Sequence[int],
        is_core: bool = False,
        idx: int | None = None,
    ) -> int:
        origins = self._check_origins(origin_seqs)
        if idx is None:
            idx = self.next_idx
        elif idx in self.units:
            raise ValueError(f"idx {idx} already present")
        self.units[idx] = MemoryUnit(
            idx=idx,
            content=content,
            slots=normalize_slots(slots),
            embedding=embed(content, self.dim),
            scope=scope,
            source_id=source_id,
            created_at=self.clock,
            last_used_at=self.clock,
            origin_seqs=origins,
            is_core=is_core,
        )
        self.next_idx = max(self.next_idx, idx + 1)
        self._index = None
        return idx

    def update(
        self,
        idx: int,
        new_content: str,
        new_slots: Iterable[Sequence[str]] | None,
        origin_seq: int | None = None,
    ) -> MemoryUnit:
        unit = self.get(idx)
        if origin_seq is not None:
            self._check_origins([origin_seq])
        unit.content = new_content
        unit.slots = normalize_slots(new_slots)
        unit.embedding = embed(new_content, self.dim)
        unit.last_used_at = max(self.clock, unit.created_at)
        if origin_seq is not None:
            unit.origin_seqs.append(origin_seq)
        self._index = None
        return unit

    def replace_content(self, idx: int, content: str) -> None:
        """Swap a unit's text (reconciliation); slots and timestamps are kept."""
        unit = self.get(idx)
        unit.content = content
        unit.embedding = embed(content, self.dim)
        self._index = None

    def delete(self, idx: int) -> bool:
        removed = self.units.pop(idx, None) is not None
        if removed:
            self._index = None
        return removed

    def touch(self, idx: int) -> None:
        unit = self.get(idx)
        unit.last_used_at = max(unit.last_used_at, self.clock)

    def _matrix(self) -> tuple[np.ndarray, np.ndarray]:
        if self._index is None:
            ids = np.array(sorted(self.units), dtype=np.int64)
            if len(ids):
                mat = np.ascontiguousarray(np.stack([self.units[int(i)].embedding for i in ids]))
            else:
                mat = np.zeros((0, self.dim))
            self._index = (ids, mat)
        return self._index

    def topk(self, query: str, k: int) -> list[tuple[int, float]]:
        """Top ``k`` units by cosine similarity, ties broken by ascending idx."""
        if k < 0:
            raise ValueError("k must be non-negative")
        ids, mat = self._matrix()
        if k == 0 or len(ids) == 0:
            return []
        scores = kernels.cosine_scores(mat, embed(query, self.dim))
        order = np.lexsort((ids, -scores))[:k]
        return [(int(ids[i]), float(scores[i])) for i in order]

    def copy(self) -> "MemoryState":
        other = MemoryState(self.ledger, self.dim, self.clock)
        other.next_idx = self.next_idx
        other.units = {
            i: replace(u, slots=tuple(u.slots), origin_seqs=list(u.origin_seqs))
            for i, u in self.units.items()
        }
        return other

    def state_hash(self, structural: bool = False) -> str:
        """Content-level hash of the active store.

        The default ignores identifiers, timestamps and origins so that stores
        reached through different ledger histories compare equal when they hold
        the same memories. ``structural=True`` also covers idx, origins and
        creation time.
        """
        rows = []
        for u in self.ordered():
            row = [u.content, [list(t) for t in u.slots], u.scope, u.source_id, u.is_core]
            if structural:
                row = [u.idx, u.created_at, list(u.origin_seqs)] + row
            rows.append(row)
        if not structural:
            rows.sort(key=lambda r: json.dumps(r, ensure_ascii=False))
        blob = json.dumps(rows, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    # --- snapshot --------------------------------------------------------

    def export_snapshot(self, path: str | os.PathLike) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        try:
            with open(tmp, "w", encoding="utf-8") as fh:
                for u in self.ordered():
                    fh.write(json.dumps(u.to_record(), separators=(",", ":"), ensure_ascii=False) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except OSError as exc:
            raise StorageFailure(f"cannot write snapshot {path}: {exc}") from exc

    @classmethod
    def import_snapshot(
        cls,
        path: str | os.PathLike,
        ledger: "Ledger | None" = None,
        dim: int = DEFAULT_DIM,
        clock: int | None = None,
    ) -> "MemoryState":
        """Load units from a snapshot; embeddings are recomputed."""
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise StorageFailure(f"cannot read snapshot {path}: {exc}") from exc
        state = cls(ledger, dim)
        latest = 0
        for line in lines:
            if not line.strip():
                continue
            rec = json.loads(line)
            state.clock = rec["created_at"]
            state.insert(
                rec["content"], rec["slots"], rec["scope"], rec["source_id"],
                rec["origin_seqs"], rec["is_core"], idx=rec["idx"],
            )
            state.units[rec["idx"]].last_used_at = rec["last_used_at"]
            latest = max(latest, rec["last_used_at"])
        state.clock = latest if clock is None else clock
        return state
