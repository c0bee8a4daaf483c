import os
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memgov.errors import ChainInvalid, RangeOutOfBounds, StorageFailure, UnknownSource
from memgov.ledger import GENESIS_HASH, Keyring, Ledger, LedgerEntry, verify_file


def fill(ledger, n, scopes=("tenantA", "tenantB")):
    for i in range(n):
        ledger.append(f"observation {i}", [("u", "k", str(i))], "alice", scopes[i % len(scopes)], i)


def test_genesis_and_linkage(ledger):
    assert ledger.append("first", [], "alice", "s", 0) == 0
    assert ledger.entry(0).prev_hash == GENESIS_HASH
    assert ledger.append("second", [], "bob", "s", 1) == 1
    assert ledger.entry(1).prev_hash == ledger.entry(0).entry_hash


def test_unknown_source(ledger):
    with pytest.raises(UnknownSource):
        ledger.append("x", [], "mallory", "s", 0)
    assert len(ledger) == 0


def test_verify_valid_and_empty(ledger):
    assert ledger.verify_chain().valid
    fill(ledger, 3)
    report = ledger.verify_chain()
    assert report.valid and report.first_bad_seq is None and report.entries == 3


def _tamper(path, pos, new_byte):
    data = bytearray(path.read_bytes())
    data[pos] = new_byte
    path.write_bytes(bytes(data))


def test_flip_content_byte_in_entry_1(ledger):
    fill(ledger, 3)
    path = ledger.path
    lines = path.read_bytes().split(b"\n")
    offset = len(lines[0]) + 1 + lines[1].index(b"observation 1")
    _tamper(path, offset, ord("O"))
    report = verify_file(path, ledger.keyring)
    assert not report.valid and report.first_bad_seq == 1


def test_forged_tag_detected(tmp_path, keyring):
    led = Ledger(tmp_path / "l.jsonl", keyring)
    fill(led, 2)
    led.close()
    other = Keyring({"alice": b"x" * 32, "bob": b"y" * 32})
    report = verify_file(tmp_path / "l.jsonl", other)
    assert not report.valid and report.first_bad_seq == 0


def test_every_single_byte_tamper_detected(tmp_path, keyring):
    led = Ledger(tmp_path / "l.jsonl", keyring)
    fill(led, 4)
    led.close()
    path = tmp_path / "l.jsonl"
    pristine = path.read_bytes()
    starts = [0]
    for i, b in enumerate(pristine):
        if b == 0x0A:
            starts.append(i + 1)
    rng = random.Random(0)
    for pos in range(len(pristine)):
        entry_of = max(i for i, s in enumerate(starts) if s <= pos)
        new = rng.choice([b for b in range(256) if b != pristine[pos]])
        data = bytearray(pristine)
        data[pos] = new
        path.write_bytes(bytes(data))
        report = verify_file(path, keyring)
        assert not report.valid, pos
        assert report.first_bad_seq <= entry_of
    path.write_bytes(pristine)


def test_reopen_rejects_tampered(tmp_path, keyring):
    led = Ledger(tmp_path / "l.jsonl", keyring)
    fill(led, 3)
    led.close()
    _tamper(tmp_path / "l.jsonl", 20, ord("#"))
    with pytest.raises(ChainInvalid):
        Ledger(tmp_path / "l.jsonl", keyring)


def test_torn_tail_truncated_on_open(tmp_path, keyring):
    led = Ledger(tmp_path / "l.jsonl", keyring)
    fill(led, 2)
    led.close()
    with open(tmp_path / "l.jsonl", "ab") as fh:
        fh.write(b'{"seq":2,"ts":')
    assert not verify_file(tmp_path / "l.jsonl", keyring).valid
    led = Ledger(tmp_path / "l.jsonl", keyring)
    assert len(led) == 2 and led.verify_chain().valid
    assert led.append("after", [], "alice", "s", 3) == 2
    led.close()


def test_append_failure_leaves_chain_unchanged(ledger, monkeypatch):
    fill(ledger, 2)
    before = ledger.path.read_bytes()
    last = ledger.last_hash

    def boom(fd):
        raise OSError("disk full")

    monkeypatch.setattr(os, "fsync", boom)
    with pytest.raises(StorageFailure):
        ledger.append("lost", [], "alice", "s", 9)
    monkeypatch.undo()
    assert len(ledger) == 2 and ledger.last_hash == last
    assert ledger.path.read_bytes() == before
    assert ledger.append("kept", [], "alice", "s", 9) == 2
    assert ledger.verify_chain().valid


def test_persistence_roundtrip(tmp_path, keyring):
    led = Ledger(tmp_path / "l.jsonl", keyring)
    fill(led, 5)
    led.append("naïve ☃ \"quoted\"\nnewline", [("s", "a", "ü")], "bob", "x", 9, kind="update", meta={"idx": 3})
    entries = led.entries()
    led.close()
    again = Ledger(tmp_path / "l.jsonl", keyring)
    assert again.entries() == entries
    assert again.verify_chain().valid
    again.close()


def test_record_format(ledger):
    ledger.append("hello", [("u", "city", "Paris")], "alice", "tenantA", 4)
    line = ledger.path.read_bytes().splitlines()[0]
    entry = LedgerEntry.from_line(line)
    rec = entry.to_record()
    assert list(rec) == ["seq", "ts", "src", "kind", "content", "slots", "scope", "meta", "prev", "hash", "tag"]
    assert rec["prev"] == "0" * 64 and rec["hash"] == rec["hash"].lower() and len(rec["tag"]) == 64


def test_replay_full_and_filtered(ledger):
    fill(ledger, 6)
    everything = ledger.replay(0, 5)
    assert [e.seq for e in everything] == list(range(6))
    b_only = ledger.replay(0, 5, scope_filter="tenantB")
    assert b_only == [e for e in everything if e.scope == "tenantB"]
    with pytest.raises(RangeOutOfBounds):
        ledger.replay(3, 1)
    with pytest.raises(RangeOutOfBounds):
        ledger.replay(0, 6)


def test_replay_empty_ledger(mem_ledger):
    assert mem_ledger.replay(0, -1) == []


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.data())
def test_replay_splits_concatenate(n, data):
    led = Ledger(None, Keyring({"alice": b"k" * 32}))
    fill(led, n)
    a = data.draw(st.integers(0, n - 1))
    b = data.draw(st.integers(a, n - 1))
    if a < b:
        m = data.draw(st.integers(a, b - 1))
        assert led.replay(a, b) == led.replay(a, m) + led.replay(m + 1, b)
    assert led.verify_chain().valid


def test_keyring_file_format(tmp_path):
    kr = Keyring(path=tmp_path / "k.tsv")
    kr.register("svc", bytes(32))
    assert (tmp_path / "k.tsv").read_text() == "svc\t" + "00" * 32 + "\n"
    assert Keyring.load(tmp_path / "k.tsv").key("svc") == bytes(32)
    with pytest.raises(UnknownSource):
        kr.key("nobody")
