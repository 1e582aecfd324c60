import shutil

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smartpipe.links import Snapshot
from smartpipe.provenance import Registry
from smartpipe.store import Minter
from smartpipe.tasks import (
    CommandService, ExecutionRecord, FixtureService, MaterializationError, ResultCache, TaskAgent,
    TaskRuntime, cache_key, materialize,
)
from smartpipe.wiring import InputSlot, TaskDecl

from conftest import script, stub

CP = (shutil.which("cp"),)


def source_av(store, minter, wire, payload: bytes):
    return minter.mint("source", wire, store.put(payload, "source"), "-")


def agent(store, decl, exec, version="1", **kw):
    rt = TaskRuntime(decl, code_version=version, exec=exec,
                     min_execution_interval=kw.pop("interval", 0.0))
    minter = kw.pop("minter", None)
    registry = kw.pop("registry", None)
    return TaskAgent(rt, store, Minter(seed=1) if minter is None else minter,
                     Registry() if registry is None else registry, **kw)


def test_materialize_order_and_names(store, tmp_path):
    m = Minter(seed=0)
    a = source_av(store, m, "a", b"A")
    b = source_av(store, m, "b", b"B")
    snap = Snapshot.of({"a": [a], "b": [b]})
    files = materialize(snap, tmp_path, store)
    assert [f.name for f in files] == [f"a.0.{a.id}", f"b.0.{b.id}"]
    assert [f.read_bytes() for f in files] == [b"A", b"B"]


def test_materialize_window(store, tmp_path):
    m = Minter(seed=0)
    xs = [source_av(store, m, "x", bytes([i])) for i in range(3)]
    files = materialize(Snapshot.of({"x": xs}), tmp_path, store)
    assert [f.name for f in files] == [f"x.{i}.{v.id}" for i, v in enumerate(xs)]


def test_materialize_ghost_and_missing(store, tmp_path):
    m = Minter(seed=0)
    g = m.mint("source", "a", None, "-", ghost=True)
    snap = Snapshot.of({"a": [g]})
    assert snap.ghost and materialize(snap, tmp_path, store) == []
    lost = m.mint("source", "a", "cas:" + "f" * 64, "-")
    with pytest.raises(MaterializationError):
        materialize(Snapshot.of({"a": [lost]}), tmp_path, store)


def test_identity_copy(store):
    decl = TaskDecl("copy", (InputSlot("a"),), ("b",))
    ag = agent(store, decl, CP)
    m = ag.minter
    a = source_av(store, m, "a", b"payload bytes")
    rec = ag.execute(Snapshot.of({"a": [a]}))
    assert rec.ok and rec.exit_status == 0 and not rec.cached
    (out,) = rec.output_values
    assert out.wire == "b" and out.source_task == "copy" and out.code_version == "1"
    assert store.get(out.payload_ref) == b"payload bytes"
    assert out.payload_ref == a.payload_ref
    assert rec.outputs == {"b": out.id}


def test_two_outputs(store):
    decl = TaskDecl("split", (InputSlot("a"),), ("x", "y"))
    ag = agent(store, decl, stub(2))
    rec = ag.execute(Snapshot.of({"a": [source_av(store, ag.minter, "a", b"1")]}))
    assert [v.wire for v in rec.output_values] == ["x", "y"]
    assert len({v.payload_ref for v in rec.output_values}) == 2


def test_nonzero_exit(store):
    reg = Registry()
    decl = TaskDecl("bad", (InputSlot("a"),), ("b",))
    ag = agent(store, decl, script("fail.py"), registry=reg)
    rec = ag.execute(Snapshot.of({"a": [source_av(store, ag.minter, "a", b"1")]}))
    assert not rec.ok and rec.exit_status == 3 and rec.output_values == []
    end = reg.query({"kind": "exec_end"})[-1]
    assert end.status == 3 and "boom" in end.detail
    assert reg.query({"kind": "mint"}) == []


def test_missing_output_names_wire(store):
    decl = TaskDecl("lazy", (InputSlot("a"),), ("b",))
    ag = agent(store, decl, script("noop.py"))
    rec = ag.execute(Snapshot.of({"a": [source_av(store, ag.minter, "a", b"1")]}))
    assert rec.exit_status == 0 and rec.error == "missing output for wire 'b'"
    assert rec.output_values == []


def test_missing_program(store):
    decl = TaskDecl("gone", (InputSlot("a"),), ("b",))
    ag = agent(store, decl, ("/nonexistent/prog",))
    rec = ag.execute(Snapshot.of({"a": [source_av(store, ag.minter, "a", b"1")]}))
    assert not rec.ok and rec.exit_status is None


def test_snapshot_key_in_env(store, tmp_path):
    prog = tmp_path / "env.sh"
    prog.write_text('#!/bin/sh\nprintf "%s" "$SMARTPIPE_SNAPSHOT_KEY" > "$2"\n')
    prog.chmod(0o755)
    decl = TaskDecl("env", (InputSlot("a"),), ("b",))
    ag = agent(store, decl, (str(prog),))
    snap = Snapshot.of({"a": [source_av(store, ag.minter, "a", b"1")]})
    rec = ag.execute(snap)
    assert store.get(rec.output_values[0].payload_ref) == snap.key.encode()


def test_cache_hit_second_run(store, counter):
    decl = TaskDecl("t", (InputSlot("a"),), ("b",))
    reg = Registry()
    ag = agent(store, decl, stub(1), registry=reg)
    a = source_av(store, ag.minter, "a", b"1")
    first = ag.execute(Snapshot.of({"a": [a]}))
    a2 = source_av(store, ag.minter, "a", b"1")  # same bytes, new event
    second = ag.execute(Snapshot.of({"a": [a2]}))
    assert counter() == 1 and ag.invocations == 1
    assert second.cached and second.exit_status is None and not second.invoked
    assert second.replay_of == first.snapshot_key
    assert second.output_values[0].payload_ref == first.output_values[0].payload_ref
    assert second.output_values[0].id != first.output_values[0].id
    assert reg.query({"kind": "cache_hit"})[0].ref == first.snapshot_key


def test_cache_miss_on_version_change(store, counter):
    decl = TaskDecl("t", (InputSlot("a"),), ("b",))
    cache = ResultCache()
    m = Minter(seed=2)
    a = source_av(store, m, "a", b"1")
    agent(store, decl, stub(1), version="1", cache=cache, minter=m).execute(Snapshot.of({"a": [a]}))
    rec = agent(store, decl, stub(1), version="2", cache=cache, minter=m).execute(Snapshot.of({"a": [a]}))
    assert not rec.cached and counter() == 2


def test_cache_requires_resident_outputs(store, counter):
    decl = TaskDecl("t", (InputSlot("a"),), ("b",))
    ag = agent(store, decl, stub(1))
    a = source_av(store, ag.minter, "a", b"1")
    ag.execute(Snapshot.of({"a": [a]}))
    store.evict(now=1e12)
    store.put(b"1", "source")
    assert not ag.execute(Snapshot.of({"a": [a]})).cached
    assert counter() == 2


def test_cache_journal_persists(store, tmp_path, counter):
    decl = TaskDecl("t", (InputSlot("a"),), ("b",))
    m = Minter(seed=2)
    a = source_av(store, m, "a", b"1")
    agent(store, decl, stub(1), cache=ResultCache(tmp_path / "c.jsonl"), minter=m).execute(Snapshot.of({"a": [a]}))
    rec = agent(store, decl, stub(1), cache=ResultCache(tmp_path / "c.jsonl"), minter=m).execute(
        Snapshot.of({"a": [a]}))
    assert rec.cached and counter() == 1


@given(st.sampled_from(["task", "version", "uri", "slot_order", "digest"]))
@settings(max_examples=20)
def test_cache_key_soundness(component):
    m = Minter(seed=0)
    a = m.mint("s", "a", "cas:aa", "-")
    b = m.mint("s", "b", "cas:bb", "-")
    base = ("t", "v1", Snapshot.of({"a": [a], "b": [b]}), (("svc", "cas:11"),))
    assert cache_key(*base) == cache_key(*base)
    # new AV ids over the same payloads keep the key
    a_again = m.mint("s", "a", "cas:aa", "-")
    assert cache_key("t", "v1", Snapshot.of({"a": [a_again], "b": [b]}), base[3]) == cache_key(*base)
    task, version, snap, digests = base
    if component == "task":
        task = "u"
    elif component == "version":
        version = "v2"
    elif component == "uri":
        snap = Snapshot.of({"a": [m.mint("s", "a", "cas:ab", "-")], "b": [b]})
    elif component == "slot_order":
        snap = Snapshot.of({"a": [b], "b": [a]})
    else:
        digests = (("svc", "cas:12"),)
    assert cache_key(task, version, snap, digests) != cache_key(*base)


def test_cache_key_ghost_is_none():
    g = Minter().mint("s", "a", None, "-", ghost=True)
    assert cache_key("t", "v", Snapshot.of({"a": [g]})) is None


def test_fixture_service_digest(store, counter):
    decl = TaskDecl("p", (InputSlot("a"), InputSlot("look", kind="implicit")), ("b",))
    reg = Registry()
    ag = agent(store, decl, stub(1), registry=reg, services={"look": FixtureService(b"constant")})
    a = source_av(store, ag.minter, "a", b"1")
    r1 = ag.execute(Snapshot.of({"a": [a]}))
    assert r1.implicit == {"look": store.digest(b"constant")}
    lookups = reg.query({"kind": "implicit_lookup"})
    assert lookups[0].wire == "look" and lookups[0].payload == store.digest(b"constant")
    r2 = ag.execute(Snapshot.of({"a": [a]}))
    assert r2.cached and r2.implicit == r1.implicit
    ag.services["look"] = FixtureService(b"changed")
    r3 = ag.execute(Snapshot.of({"a": [a]}))
    assert not r3.cached and counter() == 2


def test_implicit_response_passed_as_file(store, tmp_path):
    prog = tmp_path / "cat.sh"
    prog.write_text('#!/bin/sh\ncat "$1" "$2" > "$3"\n')
    prog.chmod(0o755)
    decl = TaskDecl("p", (InputSlot("a"), InputSlot("look", kind="implicit")), ("b",))
    ag = agent(store, decl, (str(prog),), services={"look": FixtureService("-svc")})
    rec = ag.execute(Snapshot.of({"a": [source_av(store, ag.minter, "a", b"data")]}))
    assert store.get(rec.output_values[0].payload_ref) == b"data-svc"


def test_command_service_request_slot(store):
    decl = TaskDecl("p", (InputSlot("q"), InputSlot("look", kind="implicit")), ("b",))
    rt = TaskRuntime(decl, code_version="1", exec=stub(1), request_slot="q")
    ag = TaskAgent(rt, store, Minter(seed=0), Registry(), services={"look": CommandService(script("upper.py"))})
    rec = ag.execute(Snapshot.of({"q": [source_av(store, ag.minter, "q", b"hello")]}))
    assert store.get(rec.implicit["look"]) == b"svc:HELLO"


def test_missing_service(store, counter):
    decl = TaskDecl("p", (InputSlot("a"), InputSlot("look", kind="implicit")), ("b",))
    ag = agent(store, decl, stub(1))
    rec = ag.execute(Snapshot.of({"a": [source_av(store, ag.minter, "a", b"1")]}))
    assert rec.error.startswith("service dependency") and rec.output_values == []
    assert counter() == 0


def test_failing_service(store):
    decl = TaskDecl("p", (InputSlot("a"), InputSlot("look", kind="implicit")), ("b",))
    ag = agent(store, decl, stub(1), services={"look": CommandService(script("fail.py"))})
    rec = ag.execute(Snapshot.of({"a": [source_av(store, ag.minter, "a", b"1")]}))
    assert rec.error.startswith("service dependency") and "boom" in rec.error


def test_ghost_conservation(store, counter):
    decl = TaskDecl("t", (InputSlot("a"), InputSlot("look", kind="implicit")), ("x", "y"))
    ag = agent(store, decl, stub(2), services={"look": FixtureService(b"c")})
    g = ag.minter.mint("source", "a", None, "-", ghost=True)
    puts = store.put_count
    rec = ag.execute(Snapshot.of({"a": [g]}))
    assert rec.ghost and rec.ok and counter() == 0 and ag.invocations == 0
    assert store.put_count == puts
    assert [v.wire for v in rec.output_values] == ["x", "y"]
    assert all(v.ghost and v.payload_ref is None for v in rec.output_values)


def test_rate_control(store):
    decl = TaskDecl("t", (InputSlot("a"),), ("b",))
    ag = agent(store, decl, CP, interval=5.0)
    snap = Snapshot.of({"a": [source_av(store, ag.minter, "a", b"1")]})
    assert ag.execute(snap, now=0.0) is not None
    assert ag.execute(snap, now=3.0) is None
    assert ag.runtime.due(3.0) == 5.0
    assert ag.execute(snap, now=3.0, force=True) is not None
    assert ag.execute(snap, now=7.9) is None
    assert ag.execute(snap, now=8.0) is not None
    with pytest.raises(ValueError):
        TaskRuntime(decl, min_execution_interval=-1)


def test_deterministic_replay(store, counter):
    decl = TaskDecl("t", (InputSlot("a"),), ("b",))
    m = Minter(seed=0)
    a = source_av(store, m, "a", b"1")
    uris = [agent(store, decl, stub(1), cache=ResultCache(), minter=m).execute(Snapshot.of({"a": [a]}))
            .output_values[0].payload_ref for _ in range(2)]
    assert counter() == 2 and uris[0] == uris[1]


def test_record_dict():
    rec = ExecutionRecord("t", "k", {"a": ["1"]}, {}, {"b": "2"}, 0, 0.0, 1.0, "v")
    d = rec.to_dict()
    assert d["task"] == "t" and d["cached"] is False and "output_values" not in d
