"""Periodic reconciliation of active memory against the immutable ledger."""

from __future__ import annotations

import csv
import os
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

from .embedding import DEFAULT_DIM, drift, state_drift
from .errors import ChainInvalid, InvalidConfig, InvalidOrigin, RangeOutOfBounds
from .ledger import (
    KIND_ADD,
    KIND_ARCHIVE,
    KIND_DELETE,
    KIND_REVERT,
    KIND_UPDATE,
    Ledger,
)
from .store import MemoryState, MemoryUnit

RECONCILE_MODES = ("full_rebuild", "per_unit_correct")
REPORT_COLUMNS = ("step", "units_checked", "units_corrected", "pre_drift", "post_drift")


@dataclass(frozen=True)
class ReconcileConfig:
    period_n: int = 20
    drift_threshold: float = 0.1
    mode: str = "full_rebuild"

    def __post_init__(self) -> None:
        if self.period_n < 1:
            raise InvalidConfig("period_n must be >= 1")
        if not 0.0 <= self.drift_threshold <= 2.0:
            raise InvalidConfig("drift_threshold must lie in [0, 2]")
        if self.mode not in RECONCILE_MODES:
            raise InvalidConfig(f"mode must be one of {RECONCILE_MODES}")


@dataclass(frozen=True)
class ReconcileReport:
    step: int
    units_checked: int
    units_corrected: int
    pre_drift: float
    post_drift: float
    corrected: tuple[int, ...] = ()


def schedule(step: int, cfg: ReconcileConfig) -> bool:
    if step < 0:
        raise ValueError("step must be non-negative")
    return step > 0 and step % cfg.period_n == 0


def reference_of(unit: MemoryUnit, ledger: Ledger) -> str:
    """Ground-truth text of a unit: its origin entries joined in seq order.

    An update replaces a unit's value, so origins before the latest update
    (or restoring revert) are superseded and left out.
    """
    try:
        entries = [ledger.entry(s) for s in sorted(set(unit.origin_seqs))]
    except RangeOutOfBounds as exc:
        raise InvalidOrigin(str(exc)) from None
    if not entries:
        raise InvalidOrigin(f"unit {unit.idx} has no origins")
    start = 0
    for i, e in enumerate(entries):
        if e.kind == KIND_UPDATE or (e.kind == KIND_REVERT and e.meta.get("op") == "restore"):
            start = i
    return " ".join(e.content for e in entries[start:])


def _whole_drift(state: MemoryState, refs: dict[int, str]) -> float:
    units = state.ordered()
    return state_drift([u.content for u in units], [refs[u.idx] for u in units], dim=state.dim)


def reconcile(state: MemoryState, ledger: Ledger, cfg: ReconcileConfig, step: int | None = None
              ) -> tuple[MemoryState, ReconcileReport]:
    """Return a corrected copy of ``state`` and a report; ``state`` is untouched."""
    report = ledger.verify_chain()
    if not report.valid:
        raise ChainInvalid(report.first_bad_seq)
    out = state.copy()
    refs = {u.idx: reference_of(u, ledger) for u in out.ordered()}
    pre = _whole_drift(out, refs)
    checked = 0
    corrected = []
    for unit in out.ordered():
        if unit.is_core:
            continue
        checked += 1
        ref = refs[unit.idx]
        if cfg.mode == "per_unit_correct":
            needs = drift(unit.content, ref, out.dim) > cfg.drift_threshold
        else:
            needs = unit.content != ref
        if needs:
            out.replace_content(unit.idx, ref)
            corrected.append(unit.idx)
    post = _whole_drift(out, refs) if corrected else pre
    return out, ReconcileReport(
        state.clock if step is None else step, checked, len(corrected), pre, post, tuple(corrected)
    )


def replay_state(ledger: Ledger, dim: int = DEFAULT_DIM, upto: int | None = None) -> MemoryState:
    """Rebuild the active store by replaying the ledger from genesis."""
    state = MemoryState(ledger, dim)
    last = ledger.last_seq if upto is None else upto
    for entry in ledger.entries()[: last + 1]:
        state.clock = max(state.clock, entry.timestamp)
        idx = entry.meta.get("idx")
        if entry.kind == KIND_ADD:
            state.insert(entry.content, entry.slots, entry.scope, entry.source_id, [entry.seq],
                         bool(entry.meta.get("core", False)), idx=idx)
        elif entry.kind == KIND_UPDATE:
            if idx in state:
                state.update(idx, entry.content, entry.slots, origin_seq=entry.seq)
        elif entry.kind in (KIND_DELETE, KIND_ARCHIVE):
            state.delete(idx)
        elif entry.kind == KIND_REVERT:
            op = entry.meta.get("op")
            if op == "remove":
                state.delete(idx)
            elif op == "restore" and idx in state:
                state.get(idx).slots = entry.slots
                state.replace_content(idx, entry.content)
            elif op == "reinsert" and idx not in state:
                state.insert(entry.content, entry.slots, entry.scope, entry.meta["src"],
                             entry.meta["origins"], bool(entry.meta.get("core")), idx=idx)
    return state


def append_report_csv(path: str | os.PathLike, reports: list[ReconcileReport]) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow([r.step, r.units_checked, r.units_corrected, repr(r.pre_drift), repr(r.post_drift)])


class BackgroundReconciler:
    """Reconciles a snapshot off the request path and swaps corrections in.

    Readers keep seeing the pre-reconcile state until the swap, which takes
    the writer lock once. A correction is dropped if the unit changed while
    the snapshot was being reconciled.
    """

    def __init__(self, state_ref: Callable[[], MemoryState], ledger: Ledger, cfg: ReconcileConfig,
                 lock: threading.RLock):
        self._state_ref = state_ref
        self.ledger = ledger
        self.cfg = cfg
        self.lock = lock
        self.reports: list[ReconcileReport] = []
        self._thread: threading.Thread | None = None

    def run_once(self, step: int | None = None) -> ReconcileReport:
        with self.lock:
            snapshot = self._state_ref().copy()
        cleaned, report = reconcile(snapshot, self.ledger, self.cfg, step)
        with self.lock:
            live = self._state_ref()
            for idx in report.corrected:
                unit = live.units.get(idx)
                if unit is not None and unit.content == snapshot.units[idx].content:
                    live.replace_content(idx, cleaned.units[idx].content)
        self.reports.append(report)
        return report

    def start(self, step: int | None = None) -> threading.Thread:
        self._thread = threading.Thread(target=self.run_once, args=(step,), name="reconciler", daemon=True)
        self._thread.start()
        return self._thread

    def join(self) -> None:
        if self._thread is not None:
            self._thread.join()
            self._thread = None


def report_dict(report: ReconcileReport) -> dict:
    d = asdict(report)
    d["corrected"] = list(report.corrected)
    return d


__all__ = [
    "ReconcileConfig", "ReconcileReport", "schedule", "reference_of", "reconcile",
    "replay_state", "append_report_csv", "BackgroundReconciler", "report_dict",
]
