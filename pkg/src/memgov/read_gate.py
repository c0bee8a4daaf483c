"""Constrained retrieval: Top-K, then access control, then Weibull freshness."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from fnmatch import fnmatchcase
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping

from .errors import InvalidConfig, StorageFailure
from .ledger import KIND_ARCHIVE
from .store import MemoryState, MemoryUnit

if TYPE_CHECKING:
    from .ledger import Ledger

SYSTEM_SOURCE = "_system"


@dataclass(frozen=True)
class Identity:
    principal_id: str
    attributes: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.principal_id:
            raise ValueError("principal_id must be nonempty")

    @classmethod
    def of(cls, principal_id: str, attrs: Mapping[str, str] | Iterable[str] = ()) -> "Identity":
        if isinstance(attrs, Mapping):
            pairs = frozenset(f"{k}={v}" for k, v in attrs.items())
        else:
            pairs = frozenset(attrs)
        return cls(principal_id, pairs)


@dataclass(frozen=True)
class AccessRule:
    scope_pattern: str
    required_attributes: frozenset[str]
    effect: str

    def __post_init__(self) -> None:
        if self.effect not in ("allow", "deny"):
            raise ValueError(f"effect must be allow or deny, got {self.effect!r}")

    def matches(self, scope: str, identity: Identity) -> bool:
        return fnmatchcase(scope, self.scope_pattern) and self.required_attributes <= identity.attributes


@dataclass(frozen=True)
class AccessPolicy:
    """Ordered rules; the first matching rule decides, otherwise deny."""

    rules: tuple[AccessRule, ...] = ()
    default_effect: str = "deny"

    @classmethod
    def parse(cls, text: str) -> "AccessPolicy":
        rules = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise InvalidConfig(f"policy line {lineno}: expected 3 tab-separated fields")
            pattern, attrs, effect = parts
            required = frozenset(a.strip() for a in attrs.split(",") if a.strip())
            try:
                rules.append(AccessRule(pattern, required, effect.strip()))
            except ValueError as exc:
                raise InvalidConfig(f"policy line {lineno}: {exc}") from None
        return cls(tuple(rules))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "AccessPolicy":
        path = Path(path)
        if not path.exists():
            return cls()
        try:
            return cls.parse(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise StorageFailure(f"cannot read policy {path}: {exc}") from exc

    def dumps(self) -> str:
        return "".join(
            f"{r.scope_pattern}\t{','.join(sorted(r.required_attributes))}\t{r.effect}\n" for r in self.rules
        )


@dataclass(frozen=True)
class DecayConfig:
    eta: float = 100.0
    kappa: float = 1.0
    theta_fresh: float = 0.1

    def __post_init__(self) -> None:
        if not (self.eta > 0 and self.kappa > 0):
            raise InvalidConfig("eta and kappa must be positive")
        if not 0 < self.theta_fresh <= 1:
            raise InvalidConfig("theta_fresh must lie in (0, 1]")


def freshness(delta_tau: float, cfg: DecayConfig) -> float:
    """Weibull relevance ``exp(-(delta_tau / eta) ** kappa)``."""
    if not (cfg.eta > 0 and cfg.kappa > 0):
        raise InvalidConfig("eta and kappa must be positive")
    if delta_tau < 0:
        raise ValueError("delta_tau must be non-negative")
    return math.exp(-((delta_tau / cfg.eta) ** cfg.kappa))


def acl_check(unit: MemoryUnit, identity: Identity, policy: AccessPolicy) -> bool:
    for rule in policy.rules:
        if rule.matches(unit.scope, identity):
            return rule.effect == "allow"
    return policy.default_effect == "allow"


@dataclass(frozen=True)
class CandidateAudit:
    idx: int
    similarity: float
    acl_ok: bool
    freshness: float
    fresh_ok: bool

    @property
    def admitted(self) -> bool:
        return self.acl_ok and self.fresh_ok


@dataclass
class RetrievalResult:
    units: list[MemoryUnit]
    similarities: list[float]
    audit: list[CandidateAudit] = field(default_factory=list)


def retrieve(
    query: str,
    identity: Identity,
    k: int,
    state: MemoryState,
    cfg: DecayConfig,
    policy: AccessPolicy,
    enforce_acl: bool = True,
) -> RetrievalResult:
    """Filter-after-rank retrieval; no backfill past rank ``k``.

    Survivors have ``last_used_at`` moved to the current clock.
    ``enforce_acl=False`` exists only for the leakage experiment's baseline.
    """
    audit = []
    survivors = []
    for idx, sim in state.topk(query, k):
        unit = state.units[idx]
        acl_ok = acl_check(unit, identity, policy) if enforce_acl else True
        w = freshness(state.clock - unit.last_used_at, cfg)
        entry = CandidateAudit(idx, sim, acl_ok, w, w >= cfg.theta_fresh)
        audit.append(entry)
        if entry.admitted:
            survivors.append((unit, sim))
    for unit, _ in survivors:
        unit.last_used_at = state.clock
    return RetrievalResult([u for u, _ in survivors], [s for _, s in survivors], audit)


def prune_stale(
    state: MemoryState,
    cfg: DecayConfig,
    ledger: "Ledger | None" = None,
    source_id: str = SYSTEM_SOURCE,
) -> list[int]:
    """Archive every non-core unit whose freshness fell below ``theta_fresh``."""
    archived = []
    for unit in state.ordered():
        if unit.is_core:
            continue
        if freshness(state.clock - unit.last_used_at, cfg) >= cfg.theta_fresh:
            continue
        if ledger is not None:
            ledger.append(
                unit.content, unit.slots, source_id, unit.scope, state.clock,
                kind=KIND_ARCHIVE, meta={"idx": unit.idx},
            )
        state.delete(unit.idx)
        archived.append(unit.idx)
    return archived
