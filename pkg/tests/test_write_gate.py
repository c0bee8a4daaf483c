import random

import pytest

from memgov.errors import UnknownIdx
from memgov.ledger import Keyring, Ledger
from memgov.store import MemoryState
from memgov.write_gate import (
    CONTRADICTS_CORE,
    ORACLE_FAILURE,
    PROVENANCE_INVALID,
    GateDecision,
    MemoryDelta,
    SlotOracle,
    WriteGate,
    validate,
)

from .oracles import all_pairs_conflict


@pytest.fixture
def gate(state, mem_ledger):
    g = WriteGate(state, mem_ledger)
    yield g
    g.close()


def add_core(gate, slots, content="core fact"):
    return gate.commit(MemoryDelta.add(content, slots, "alice", "s", is_core=True))


def test_delta_shape():
    with pytest.raises(ValueError):
        MemoryDelta("Add", "a", target_idx=3)
    with pytest.raises(ValueError):
        MemoryDelta("Update", "a")
    with pytest.raises(ValueError):
        MemoryDelta("Rename", "a")


def test_contradiction_rejected(gate):
    add_core(gate, [("u", "city", "Paris")])
    d = MemoryDelta.add("moved to Lyon", [("u", "city", "Lyon")], "alice", "s")
    decision = gate.validate(d)
    assert decision == GateDecision(False, CONTRADICTS_CORE, 0, (("u", "city", "Lyon"), ("u", "city", "Paris")))
    assert validate(d, gate.state).admitted is False


def test_empty_slots_admitted(gate):
    add_core(gate, [("u", "city", "Paris")])
    assert gate.validate(MemoryDelta.add("chit chat", [], "alice", "s")).admitted


def test_multi_valued_attributes(state, mem_ledger):
    g = WriteGate(state, mem_ledger, SlotOracle(["likes"]))
    add_core(g, [("u", "likes", "tea")])
    assert g.validate(MemoryDelta.add("x", [("u", "likes", "coffee")], "alice", "s")).admitted


def test_provenance_invalid(gate):
    d = MemoryDelta.add("x", [], "mallory", "s")
    assert gate.validate(d).reason == PROVENANCE_INVALID
    before = len(gate.ledger)
    res = gate.commit(d)
    assert not res.admitted and res.decision.reason == PROVENANCE_INVALID
    assert gate.ledger.entry(before).kind == "rejection"
    assert gate.ledger.entry(before).meta["by"] == "mallory"


def test_randomized_validate_matches_all_pairs():
    rng = random.Random(21)
    subjects, attrs, values = ["u", "v", "w"], ["city", "job", "likes", "age"], ["1", "2", "3"]
    triple = lambda: (rng.choice(subjects), rng.choice(attrs), rng.choice(values))  # noqa: E731
    for _ in range(1000):
        led = Ledger(None, Keyring({"alice": b"a" * 32}))
        led.append("g", [], "alice", "s", 0)
        s = MemoryState(led)
        cores = []
        for _ in range(rng.randint(0, 3)):
            slots = [triple() for _ in range(rng.randint(0, 10))]
            idx = s.insert("c", slots, "s", "alice", [0], is_core=True)
            cores.append((idx, tuple(slots)))
        s.insert("noncore", [triple()], "s", "alice", [0])
        multi = rng.sample(attrs, rng.randint(0, 1))
        delta_slots = [triple() for _ in range(rng.randint(0, 10))]
        d = MemoryDelta.add("d", delta_slots, "alice", "s")
        decision = validate(d, s, SlotOracle(multi))
        expect = all_pairs_conflict(delta_slots, cores, multi)
        assert decision.admitted == (expect is None)
        assert decision.conflicting_core_idx == expect
        assert (decision.reason == "Clean") == decision.admitted


def test_commit_add_and_rejection_audit(gate):
    res = gate.commit(MemoryDelta.add("hello", [("u", "city", "Paris")], "alice", "s", proposed_at=1, is_core=True))
    assert res.admitted and res.idx == 0 and res.seq == 0
    assert len(gate.state) == 1 and len(gate.ledger) == 1
    h = gate.state.state_hash(structural=True)
    bad = gate.commit(MemoryDelta.add("bye", [("u", "city", "Rome")], "bob", "s", proposed_at=2))
    assert not bad.admitted
    assert gate.state.state_hash(structural=True) == h
    audit = gate.ledger.entry(bad.seq)
    assert audit.kind == "rejection" and audit.meta["reason"] == CONTRADICTS_CORE and audit.source_id == "_system"


def test_three_admitted_then_chain_valid(tmp_path, keyring):
    led = Ledger(tmp_path / "l.jsonl", keyring)
    g = WriteGate(MemoryState(led), led)
    for i in range(3):
        assert g.commit(MemoryDelta.add(f"m{i}", [], "alice", "s", proposed_at=i)).admitted
    assert led.verify_chain().valid
    led.close()


def test_update_and_delete_paths(gate):
    a = gate.commit(MemoryDelta.add("user in Paris", [("u", "city", "Paris")], "alice", "s", 1)).idx
    up = gate.commit(MemoryDelta.update(a, "user in Lyon", [("u", "city", "Lyon")], "alice", 2))
    assert up.admitted and gate.state.get(a).slots == (("u", "city", "Lyon"),)
    assert gate.state.get(a).origin_seqs == [0, up.seq]
    with pytest.raises(UnknownIdx):
        gate.commit(MemoryDelta.update(99, "x", [], "alice", 3))
    rm = gate.commit(MemoryDelta.delete(a, "alice", 4))
    assert rm.admitted and rm.removed is True and a not in gate.state
    again = gate.commit(MemoryDelta.delete(a, "alice", 5))
    assert again.admitted and again.removed is False
    assert [e.kind for e in gate.ledger.entries()] == ["add", "update", "delete", "delete"]


def test_core_is_protected_unless_privileged(gate):
    c = add_core(gate, [("u", "city", "Paris")]).idx
    add_core(gate, [("v", "city", "Oslo")])
    res = gate.commit(MemoryDelta.update(c, "moved", [("u", "city", "Lyon")], "alice"))
    assert not res.admitted and res.decision.conflicting_core_idx == c
    assert not gate.commit(MemoryDelta.delete(c, "alice")).admitted
    ok = gate.commit(MemoryDelta.update(c, "moved", [("u", "city", "Lyon")], "alice", privileged=True))
    assert ok.admitted and gate.state.get(c).slots == (("u", "city", "Lyon"),)
    # the core view is refreshed after a core update
    assert not gate.commit(MemoryDelta.add("x", [("u", "city", "Paris")], "bob", "s")).admitted
    blocked = gate.commit(MemoryDelta.update(c, "x", [("v", "city", "Rome")], "alice", privileged=True))
    assert not blocked.admitted and blocked.decision.conflicting_core_idx == 1


def test_oracle_failure_rejects(state, mem_ledger):
    def broken(delta_slots, core_slots):
        raise RuntimeError("nli service down")

    g = WriteGate(state, mem_ledger, broken)
    add_core(g, [("u", "a", "b")])
    res = g.commit(MemoryDelta.add("x", [("u", "a", "c")], "alice", "s"))
    assert not res.admitted and res.decision.reason == ORACLE_FAILURE
    assert len(state) == 1


def test_exactly_one_ledger_entry_per_commit():
    rng = random.Random(2)
    led = Ledger(None, Keyring({"alice": b"a" * 32}))
    s = MemoryState(led)
    g = WriteGate(s, led)
    admitted = rejected = 0
    for i in range(400):
        subj = f"s{rng.randrange(20)}"
        core = rng.random() < 0.2
        d = MemoryDelta.add(f"f{i}", [(subj, "p", str(rng.randrange(3)))], rng.choice(["alice", "eve"]), "s",
                            proposed_at=i, is_core=core)
        before_hash = s.state_hash(structural=True)
        res = g.commit(d)
        if res.admitted:
            admitted += 1
        else:
            rejected += 1
            assert s.state_hash(structural=True) == before_hash
    kinds = [e.kind for e in led.entries()]
    assert kinds.count("add") == admitted and kinds.count("rejection") == rejected


def test_safety_fuzz_no_noncore_contradicts_earlier_core():
    rng = random.Random(9)
    led = Ledger(None, Keyring({"alice": b"a" * 32}))
    s = MemoryState(led)
    g = WriteGate(s, led)
    for i in range(600):
        slot = (f"s{rng.randrange(15)}", rng.choice(["p", "q"]), str(rng.randrange(4)))
        if s.units and rng.random() < 0.2:
            target = rng.choice(sorted(s.units))
            g.commit(MemoryDelta.update(target, f"u{i}", [slot], "alice", i))
        else:
            g.commit(MemoryDelta.add(f"f{i}", [slot], "alice", "s", i, is_core=rng.random() < 0.15))
    cores = [u for u in s.ordered() if u.is_core]
    for u in s.ordered():
        if u.is_core:
            continue
        admitted_at = max(u.origin_seqs)
        for c in cores:
            if c.origin_seqs[0] < admitted_at:
                for d in u.slots:
                    for cs in c.slots:
                        assert not (d[0] == cs[0] and d[1] == cs[1] and d[2] != cs[2])


def test_async_mode_converges_to_sync():
    def run(mode):
        led = Ledger(None, Keyring({"alice": b"a" * 32, "_system": b"s" * 32}))
        s = MemoryState(led)
        setup = WriteGate(s, led)
        for i in range(10):
            setup.commit(MemoryDelta.add(f"core {i}", [(f"e{i}", "home", "x")], "alice", "s", is_core=True))
        g = WriteGate(s, led, mode=mode)
        rng = random.Random(4)
        for i in range(200):
            val = "x" if rng.random() < 0.7 else "y"
            g.commit(MemoryDelta.add(f"w{i}", [(f"e{rng.randrange(10)}", "home", val)], "alice", "s", i))
        g.drain()
        g.close()
        return s, led

    sync_state, sync_led = run("sync")
    async_state, async_led = run("async")
    assert async_state.state_hash() == sync_state.state_hash()
    assert async_led.verify_chain().valid
    kinds = [e.kind for e in async_led.entries()]
    assert kinds.count("rejection") == kinds.count("revert") == [e.kind for e in sync_led.entries()].count("rejection")


def test_async_reverts_update():
    led = Ledger(None, Keyring({"alice": b"a" * 32, "_system": b"s" * 32}))
    s = MemoryState(led)
    WriteGate(s, led).commit(MemoryDelta.add("core", [("u", "city", "Paris")], "alice", "s", is_core=True))
    g = WriteGate(s, led, mode="async")
    idx = g.commit(MemoryDelta.add("note", [("u", "mood", "ok")], "alice", "s")).idx
    g.commit(MemoryDelta.update(idx, "note moved", [("u", "city", "Rome")], "alice"))
    g.drain()
    g.close()
    assert s.get(idx).content == "note" and s.get(idx).slots == (("u", "mood", "ok"),)
