from __future__ import annotations

import pytest

from memgov.ledger import Keyring, Ledger
from memgov.store import MemoryState


@pytest.fixture
def keyring(tmp_path):
    kr = Keyring(path=tmp_path / "keyring.tsv")
    kr.register("alice", bytes(range(32)))
    kr.register("bob", bytes(range(32, 64)))
    kr.register("_system", bytes(range(64, 96)))
    return kr


@pytest.fixture
def ledger(tmp_path, keyring):
    led = Ledger(tmp_path / "ledger.jsonl", keyring)
    yield led
    led.close()


@pytest.fixture
def mem_ledger(keyring):
    return Ledger(None, keyring)


@pytest.fixture
def state(mem_ledger):
    return MemoryState(mem_ledger)


# (criterion, passed, detail) rows filled in by the acceptance suite
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
