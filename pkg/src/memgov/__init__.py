"""Governed long-term memory for agents.

Writes pass a contradiction gate against protected core facts and are recorded
in a hash-chained ledger; reads pass access-control and freshness filters; a
reconciler periodically re-aligns active memory with the ledger.
"""

from .embedding import cosine, drift, embed
from .errors import (
    ChainInvalid,
    InvalidConfig,
    InvalidOrigin,
    MemgovError,
    RangeOutOfBounds,
    StorageFailure,
    UnknownIdx,
    UnknownSource,
)
from .kernels import BACKEND
from .ledger import ChainReport, Keyring, Ledger, LedgerEntry
from .read_gate import AccessPolicy, AccessRule, DecayConfig, Identity, acl_check, freshness, prune_stale, retrieve
from .reconciler import ReconcileConfig, ReconcileReport, reconcile, reference_of, replay_state, schedule
from .store import MemoryState, MemoryUnit
from .write_gate import GateDecision, MemoryDelta, SlotOracle, WriteGate, validate

__version__ = "0.1.0"

__all__ = [
    "cosine", "drift", "embed",
    "ChainInvalid", "InvalidConfig", "InvalidOrigin", "MemgovError", "RangeOutOfBounds", "StorageFailure",
    "UnknownIdx", "UnknownSource",
    "BACKEND",
    "ChainReport", "Keyring", "Ledger", "LedgerEntry",
    "AccessPolicy", "AccessRule", "DecayConfig", "Identity", "acl_check", "freshness", "prune_stale", "retrieve",
    "ReconcileConfig", "ReconcileReport", "reconcile", "reference_of", "replay_state", "schedule",
    "MemoryState", "MemoryUnit",
    "GateDecision", "MemoryDelta", "SlotOracle", "WriteGate", "validate",
]
