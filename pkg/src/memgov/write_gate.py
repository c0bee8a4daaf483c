"""Write governance: contradiction check against protected core facts before commit."""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Iterable, Optional, Protocol, Sequence

from .errors import OracleFailure, UnknownIdx
from .ledger import (
    KIND_ADD,
    KIND_DELETE,
    KIND_REJECTION,
    KIND_REVERT,
    KIND_UPDATE,
    Slot,
    normalize_slots,
)
from .read_gate import SYSTEM_SOURCE
from .store import MemoryState

if TYPE_CHECKING:
    from .ledger import Ledger

logger = logging.getLogger(__name__)

ADD, UPDATE, DELETE = "Add", "Update", "Delete"
CLEAN = "Clean"
CONTRADICTS_CORE = "ContradictsCore"
PROVENANCE_INVALID = "ProvenanceInvalid"
ORACLE_FAILURE = "OracleFailure"

GATE_MODES = ("sync", "async", "off")


@dataclass(frozen=True)
class MemoryDelta:
    kind: str
    source_id: str
    scope: str = ""
    content: str = ""
    slots: tuple[Slot, ...] = ()
    target_idx: int | None = None
    proposed_at: int = 0
    is_core: bool = False
    privileged: bool = False

    def __post_init__(self) -> None:
        if self.kind not in (ADD, UPDATE, DELETE):
            raise ValueError(f"unknown delta kind {self.kind!r}")
        if (self.kind == ADD) != (self.target_idx is None):
            raise ValueError("Update/Delete need a target_idx; Add must not carry one")
        object.__setattr__(self, "slots", normalize_slots(self.slots))

    @classmethod
    def add(cls, content: str, slots: Iterable[Sequence[str]], source_id: str, scope: str,
            proposed_at: int = 0, is_core: bool = False) -> "MemoryDelta":
        return cls(ADD, source_id, scope, content, tuple(slots), None, proposed_at, is_core)

    @classmethod
    def update(cls, idx: int, content: str, slots: Iterable[Sequence[str]], source_id: str,
               proposed_at: int = 0, privileged: bool = False) -> "MemoryDelta":
        return cls(UPDATE, source_id, "", content, tuple(slots), idx, proposed_at, privileged=privileged)

    @classmethod
    def delete(cls, idx: int, source_id: str, proposed_at: int = 0, privileged: bool = False) -> "MemoryDelta":
        return cls(DELETE, source_id, "", "", (), idx, proposed_at, privileged=privileged)


@dataclass(frozen=True)
class GateDecision:
    admitted: bool
    reason: str = CLEAN
    conflicting_core_idx: int | None = None
    conflict: tuple[Slot, Slot] | None = None

    def to_dict(self) -> dict:
        out: dict = {"admitted": self.admitted, "reason": self.reason}
        if self.conflicting_core_idx is not None:
            out["conflicting_core_idx"] = self.conflicting_core_idx
        if self.conflict is not None:
            out["conflict"] = [list(self.conflict[0]), list(self.conflict[1])]
        return out


class ContradictionOracle(Protocol):
    def __call__(self, delta_slots: Sequence[Slot], core_slots: Sequence[Slot]) -> Optional[tuple[Slot, Slot]]:
        ...


class SlotOracle:
    """Symbolic contradiction: same (subject, attribute), different value.

    Attributes listed as multi-valued never conflict.
    """

    def __init__(self, multi_valued_attributes: Iterable[str] = ()):
        self.multi_valued = frozenset(multi_valued_attributes)

    def __call__(self, delta_slots: Sequence[Slot], core_slots: Sequence[Slot]) -> Optional[tuple[Slot, Slot]]:
        for d in delta_slots:
            if d[1] in self.multi_valued:
                continue
            for c in core_slots:
                if d[0] == c[0] and d[1] == c[1] and d[2] != c[2]:
                    return d, c
        return None


CoreView = tuple[tuple[int, tuple[Slot, ...]], ...]


def core_view(state: MemoryState) -> CoreView:
    return tuple((u.idx, u.slots) for u in state.core_units())


def _check_core(delta: MemoryDelta, core: CoreView, oracle: ContradictionOracle) -> GateDecision:
    target_core = delta.target_idx is not None and any(i == delta.target_idx for i, _ in core)
    if target_core and not delta.privileged:
        return GateDecision(False, CONTRADICTS_CORE, delta.target_idx)
    if not delta.slots:
        return GateDecision(True)
    for idx, slots in core:
        if idx == delta.target_idx:
            continue
        try:
            hit = oracle(delta.slots, slots)
        except Exception as exc:  # noqa: BLE001 - third-party oracle
            raise OracleFailure(str(exc)) from exc
        if hit is not None:
            return GateDecision(False, CONTRADICTS_CORE, idx, hit)
    return GateDecision(True)


def validate(
    delta: MemoryDelta,
    state: MemoryState,
    oracle: ContradictionOracle | None = None,
    keyring=None,
) -> GateDecision:
    """Pure admission check: provenance (when a keyring is given), then core consistency."""
    if keyring is not None and delta.source_id not in keyring:
        return GateDecision(False, PROVENANCE_INVALID)
    return _check_core(delta, core_view(state), oracle or SlotOracle())


@dataclass(frozen=True)
class CommitResult:
    decision: GateDecision
    seq: int | None = None
    idx: int | None = None
    removed: bool | None = None

    @property
    def admitted(self) -> bool:
        return self.decision.admitted


class WriteGate:
    """Serialises commits against one store and ledger.

    ``sync`` validates on the write path. ``async`` admits optimistically,
    validates on a background worker and reverts through the ledger on late
    rejection. ``off`` skips the contradiction check (baseline only).
    """

    def __init__(
        self,
        state: MemoryState,
        ledger: "Ledger",
        oracle: ContradictionOracle | None = None,
        mode: str = "sync",
        lock: threading.RLock | None = None,
    ):
        if mode not in GATE_MODES:
            raise ValueError(f"gate_mode must be one of {GATE_MODES}")
        self.state = state
        self.ledger = ledger
        self.oracle = oracle or SlotOracle()
        self.mode = mode
        self.lock = lock or threading.RLock()
        self._core: CoreView | None = None
        self._queue: queue.Queue | None = None
        self._worker: threading.Thread | None = None
        if SYSTEM_SOURCE not in ledger.keyring:
            ledger.keyring.register(SYSTEM_SOURCE)
        if mode == "async":
            self._queue = queue.Queue()
            self._worker = threading.Thread(target=self._drain_loop, name="write-gate-async", daemon=True)
            self._worker.start()

    def _core_view(self) -> CoreView:
        if self._core is None:
            self._core = core_view(self.state)
        return self._core

    def invalidate_core(self) -> None:
        self._core = None

    def validate(self, delta: MemoryDelta) -> GateDecision:
        if delta.source_id not in self.ledger.keyring:
            return GateDecision(False, PROVENANCE_INVALID)
        return _check_core(delta, self._core_view(), self.oracle)

    def commit(self, delta: MemoryDelta) -> CommitResult:
        with self.lock:
            if delta.source_id not in self.ledger.keyring:
                return self._reject(delta, GateDecision(False, PROVENANCE_INVALID))
            if self.mode == "sync":
                try:
                    decision = _check_core(delta, self._core_view(), self.oracle)
                except OracleFailure:
                    logger.exception("contradiction oracle failed")
                    decision = GateDecision(False, ORACLE_FAILURE)
                if not decision.admitted:
                    return self._reject(delta, decision)
            if delta.kind == UPDATE and delta.target_idx not in self.state:
                raise UnknownIdx(delta.target_idx)
            core = self._core_view()
            prior = self.state.units.get(delta.target_idx) if delta.target_idx is not None else None
            prior_copy = None
            if prior is not None and self._queue is not None:
                prior_copy = replace(prior, origin_seqs=list(prior.origin_seqs))
            result = self._apply(delta)
            if self._queue is not None:
                self._queue.put((delta, result, core, prior_copy))
            return result

    def _reject(self, delta: MemoryDelta, decision: GateDecision, late_seq: int | None = None) -> CommitResult:
        meta = {"delta": delta.kind, "reason": decision.reason, "by": delta.source_id}
        if delta.target_idx is not None:
            meta["target"] = delta.target_idx
        if decision.conflicting_core_idx is not None:
            meta["conflict_idx"] = decision.conflicting_core_idx
        if late_seq is not None:
            meta["observation"] = late_seq
        seq = self.ledger.append(
            delta.content, delta.slots, SYSTEM_SOURCE, delta.scope, max(delta.proposed_at, 0),
            kind=KIND_REJECTION, meta=meta,
        )
        return CommitResult(decision, seq)

    def _apply(self, delta: MemoryDelta) -> CommitResult:
        state = self.state
        state.clock = max(state.clock, delta.proposed_at)
        ts = delta.proposed_at
        if delta.kind == ADD:
            idx = state.next_idx
            seq = self.ledger.append(
                delta.content, delta.slots, delta.source_id, delta.scope, ts,
                kind=KIND_ADD, meta={"idx": idx, "core": delta.is_core},
            )
            state.insert(delta.content, delta.slots, delta.scope, delta.source_id, [seq], delta.is_core, idx=idx)
            if delta.is_core:
                self.invalidate_core()
            return CommitResult(GateDecision(True), seq, idx)
        if delta.kind == UPDATE:
            unit = state.get(delta.target_idx)
            seq = self.ledger.append(
                delta.content, delta.slots, delta.source_id, unit.scope, ts,
                kind=KIND_UPDATE, meta={"idx": delta.target_idx},
            )
            state.update(delta.target_idx, delta.content, delta.slots, origin_seq=seq)
            if unit.is_core:
                self.invalidate_core()
            return CommitResult(GateDecision(True), seq, delta.target_idx)
        unit = state.units.get(delta.target_idx)
        seq = self.ledger.append(
            "", (), delta.source_id, unit.scope if unit else delta.scope, ts,
            kind=KIND_DELETE, meta={"idx": delta.target_idx},
        )
        removed = state.delete(delta.target_idx)
        if unit is not None and unit.is_core:
            self.invalidate_core()
        return CommitResult(GateDecision(True), seq, delta.target_idx, removed)

    # --- async mode ------------------------------------------------------

    def _drain_loop(self) -> None:
        assert self._queue is not None
        while True:
            item = self._queue.get()
            try:
                if item is None:
                    return
                self._late_validate(*item)
            except Exception:  # noqa: BLE001
                logger.exception("background validation failed")
            finally:
                self._queue.task_done()

    def _late_validate(self, delta: MemoryDelta, result: CommitResult, core: CoreView, prior) -> None:
        try:
            decision = _check_core(delta, core, self.oracle)
        except OracleFailure:
            decision = GateDecision(False, ORACLE_FAILURE)
        if decision.admitted:
            return
        with self.lock:
            self._reject(delta, decision, late_seq=result.seq)
            self._revert(delta, result, prior)

    def _revert(self, delta: MemoryDelta, result: CommitResult, prior) -> None:
        state = self.state
        idx = result.idx
        if delta.kind == ADD:
            unit = state.units.get(idx)
            if unit is None:
                return
            self.ledger.append("", (), SYSTEM_SOURCE, unit.scope, state.clock,
                               kind=KIND_REVERT, meta={"idx": idx, "op": "remove"})
            state.delete(idx)
            if unit.is_core:
                self.invalidate_core()
        elif delta.kind == UPDATE and prior is not None and idx in state:
            self.ledger.append(prior.content, prior.slots, SYSTEM_SOURCE, prior.scope, state.clock,
                               kind=KIND_REVERT, meta={"idx": idx, "op": "restore"})
            unit = state.get(idx)
            unit.slots = prior.slots
            state.replace_content(idx, prior.content)
            if unit.is_core:
                self.invalidate_core()
        elif delta.kind == DELETE and prior is not None and idx not in state:
            self.ledger.append(prior.content, prior.slots, SYSTEM_SOURCE, prior.scope, state.clock,
                               kind=KIND_REVERT, meta={"idx": idx, "op": "reinsert", "core": prior.is_core,
                                                       "src": prior.source_id, "origins": list(prior.origin_seqs)})
            saved = state.clock
            state.clock = prior.created_at
            state.insert(prior.content, prior.slots, prior.scope, prior.source_id,
                         prior.origin_seqs, prior.is_core, idx=idx)
            state.clock = saved
            state.units[idx].last_used_at = prior.last_used_at
            if prior.is_core:
                self.invalidate_core()

    def drain(self) -> None:
        """Block until every optimistically admitted delta has been validated."""
        if self._queue is not None:
            self._queue.join()

    def close(self) -> None:
        if self._queue is not None and self._worker is not None:
            self._queue.put(None)
            self._worker.join()
            self._queue = None
            self._worker = None
