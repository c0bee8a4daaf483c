"""Flat ``key=value`` configuration with dotted section prefixes.

Example::

    decay.eta=10
    decay.kappa=1.5
    reconcile.period_n=20
    gate_mode=sync
    multi_valued_attributes=likes,knows
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .embedding import DEFAULT_DIM
from .errors import InvalidConfig
from .read_gate import DecayConfig
from .reconciler import ReconcileConfig
from .write_gate import GATE_MODES

DATA_DIR_ENV = "SSGM_DATA_DIR"
CONFIG_FILENAME = "memgov.conf"
LEDGER_FILENAME = "ledger.jsonl"
KEYRING_FILENAME = "keyring.tsv"
POLICY_FILENAME = "policy.tsv"
SNAPSHOT_FILENAME = "snapshot.jsonl"
REPORT_FILENAME = "reconcile_report.csv"


@dataclass(frozen=True)
class CliConfig:
    data_dir: Path
    decay: DecayConfig = field(default_factory=DecayConfig)
    reconcile: ReconcileConfig = field(default_factory=ReconcileConfig)
    policy_path: Path | None = None
    keyring_path: Path | None = None
    embedding_dim: int = DEFAULT_DIM
    gate_mode: str = "sync"
    multi_valued_attributes: tuple[str, ...] = ()
    auto_reconcile: bool = True
    auto_prune: bool = True

    def __post_init__(self) -> None:
        if self.embedding_dim < 8:
            raise InvalidConfig("embedding_dim must be >= 8")
        if self.gate_mode not in GATE_MODES:
            raise InvalidConfig(f"gate_mode must be one of {GATE_MODES}")

    @property
    def ledger_path(self) -> Path:
        return self.data_dir / LEDGER_FILENAME

    @property
    def snapshot_path(self) -> Path:
        return self.data_dir / SNAPSHOT_FILENAME

    @property
    def report_path(self) -> Path:
        return self.data_dir / REPORT_FILENAME

    @property
    def resolved_keyring(self) -> Path:
        return self.keyring_path or self.data_dir / KEYRING_FILENAME

    @property
    def resolved_policy(self) -> Path:
        return self.policy_path or self.data_dir / POLICY_FILENAME


def parse_flat(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidConfig(f"config line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise InvalidConfig(f"not a boolean: {v!r}")


def build_config(data_dir: str | os.PathLike | None, values: Mapping[str, str] = {}) -> CliConfig:
    """Apply flat overrides on top of defaults. Unknown keys are an error."""
    if data_dir is None:
        data_dir = os.environ.get(DATA_DIR_ENV) or "."
    cfg = CliConfig(Path(data_dir))
    decay: dict = {}
    rec: dict = {}
    top: dict = {}
    try:
        for key, v in values.items():
            if key in ("decay.eta", "decay.kappa", "decay.theta_fresh"):
                decay[key.split(".", 1)[1]] = float(v)
            elif key == "decay.auto_prune":
                top["auto_prune"] = _bool(v)
            elif key == "reconcile.period_n":
                rec["period_n"] = int(v)
            elif key == "reconcile.drift_threshold":
                rec["drift_threshold"] = float(v)
            elif key == "reconcile.mode":
                rec["mode"] = v
            elif key == "reconcile.auto":
                top["auto_reconcile"] = _bool(v)
            elif key in ("embedding_dim", "embedding.dim"):
                top["embedding_dim"] = int(v)
            elif key in ("gate_mode", "gate.mode"):
                top["gate_mode"] = v
            elif key in ("multi_valued_attributes", "gate.multi_valued_attributes"):
                top["multi_valued_attributes"] = tuple(a.strip() for a in v.split(",") if a.strip())
            elif key in ("policy_path", "keyring_path"):
                top[key] = Path(v)
            else:
                raise InvalidConfig(f"unknown config key {key!r}")
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from None
    return replace(
        cfg,
        decay=replace(cfg.decay, **decay),
        reconcile=replace(cfg.reconcile, **rec),
        **top,
    )


def load_config(
    data_dir: str | os.PathLike | None,
    config_file: str | os.PathLike | None = None,
    overrides: Mapping[str, str] = {},
) -> CliConfig:
    """File values first, then ``overrides`` (command-line flags) on top."""
    if data_dir is None:
        data_dir = os.environ.get(DATA_DIR_ENV) or "."
    values: dict[str, str] = {}
    path = Path(config_file) if config_file else Path(data_dir) / CONFIG_FILENAME
    if path.exists():
        values.update(parse_flat(path.read_text(encoding="utf-8")))
    elif config_file:
        raise InvalidConfig(f"config file {path} not found")
    values.update(overrides)
    return build_config(data_dir, values)
