import json

import pytest

from smartpipe import FeedEvent, FixtureService, Registry, UpdateTrigger
from smartpipe.provenance import EVENT_KINDS, ConceptEdge, ProvenanceEvent, format_clock

from conftest import TFMODEL, make_pipeline

CHAIN2 = "[chain]\n(in) A (mid)\n(mid) B (out)\n"


def events(n, wire="in"):
    return [FeedEvent(wire, 100.0, payload=f"v{i}".encode()) for i in range(n)]


@pytest.fixture
def chain_run(tmp_path):
    reg = Registry(tmp_path / "reg.jsonl")
    p = make_pipeline(CHAIN2, tmp_path, registry=reg)
    rep = p.run_reactive(events(2))
    return p, rep, reg


def test_record_sequence_and_file(tmp_path):
    reg = Registry(tmp_path / "r.jsonl", clock=lambda: 5.0)
    a = reg.record("ingest", "run-1", wire="in")
    b = reg.record("mint", "run-1", wire="in", av="x", cause=a.seq)
    assert b.seq == a.seq + 1 and len(reg) == 2
    lines = (tmp_path / "r.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["format"] == "smartpipe-registry"
    assert ProvenanceEvent.from_json(lines[2]) == b
    with pytest.raises(ValueError):
        reg.record("explode", "run-1")
    assert set(EVENT_KINDS) >= {"ingest", "mint", "exec_end", "cache_hit", "implicit_lookup"}


def test_field_order_is_stable(chain_run):
    _, _, reg = chain_run
    keys = {tuple(json.loads(line)) for line in reg.path.read_text().splitlines()[1:]}
    assert len(keys) == 1


def test_every_mint_has_cause(chain_run):
    _, _, reg = chain_run
    for m in reg.query({"kind": "mint"}):
        assert reg.event(m.cause).kind in ("ingest", "exec_end", "cache_hit")


def test_traveller_ingest(chain_run):
    p, _, reg = chain_run
    src = p.history["in"][0]
    (hop,) = reg.traveller(src.id)
    assert hop.kind == "ingest" and hop.wire == "in"


def test_traveller_chain(tmp_path):
    p = make_pipeline(CHAIN2, tmp_path, versions={"A": "a1", "B": "b7"})
    rep = p.run_reactive(events(1))
    hops = p.registry.traveller(rep.terminal[0].id)
    assert [h.kind for h in hops] == ["exec", "exec", "ingest"]
    assert [h.task for h in hops[:2]] == ["B", "A"]
    assert [h.code_version for h in hops[:2]] == ["b7", "a1"]
    assert hops[0].inputs == (hops[1].av,) and hops[1].inputs == (hops[2].av,)


def test_traveller_cache_replay(tmp_path):
    p = make_pipeline(CHAIN2, tmp_path)
    first = p.run_reactive({"in": b"same"})
    again = p.run_reactive({"in": b"same"})
    hops = p.registry.traveller(again.terminal[0].id)
    assert [h.cached for h in hops] == [True, True, False]
    orig = p.registry.traveller(first.terminal[0].id)
    assert hops[0].replay_of == orig[0].snapshot
    assert "replay of snapshot" in p.registry.render_traveller(again.terminal[0].id)


def test_traveller_unknown():
    with pytest.raises(KeyError):
        Registry().traveller("nope")


def test_traveller_records_lookup_digest(tmp_path):
    p = make_pipeline(TFMODEL, tmp_path, services={"lookup": FixtureService(b"fx")})
    rep = p.run_reactive(events(10))
    (hop, *_) = p.registry.traveller(rep.terminal[0].id)
    assert hop.digests == (("lookup", p.store.digest(b"fx")),)


def test_query_basics(chain_run):
    _, rep, reg = chain_run
    assert len(reg.query()) == len(reg)
    ends = reg.query({"kind": "exec_end", "task": "B"})
    assert len(ends) == 2 and all(e.task == "B" for e in ends)
    with pytest.raises(ValueError):
        reg.query({"colour": "red"})
    seqs = [e.seq for e in reg.query(seq_range=(3, 6))]
    assert seqs == [3, 4, 5, 6]
    walls = [e.wall for e in reg.events]
    assert len(reg.query(time_range=(walls[0], walls[0]))) >= 1
    assert reg.query({"code_version": "1", "kind": "mint"})


def test_query_cross_checks_traveller(chain_run):
    _, rep, reg = chain_run
    target = rep.terminal[-1].id
    # follow mint -> cause -> inputs with exact-match queries only
    found, todo = set(), [target]
    while todo:
        cur = todo.pop()
        found.add(cur)
        (mint,) = reg.query({"kind": "mint", "av": cur})
        (cause,) = reg.query(seq_range=(mint.cause, mint.cause))
        assert cause in reg.query({"av": cause.inputs[0]}) if cause.inputs else cause.kind == "ingest"
        todo.extend(cause.inputs)
    assert found == {h.av for h in reg.traveller(target)}


def test_checkpoint_majors(chain_run):
    _, _, reg = chain_run
    rows = reg.checkpoint("A")
    assert sorted({r[1] for r in rows}) == [1, 2]
    assert [r[3] for r in rows if r[3] is not None] == [0, 1]
    with pytest.raises(KeyError):
        reg.checkpoint("nope")


def test_checkpoint_layout(tmp_path, monkeypatch):
    monkeypatch.setenv("STUB_REMARK", "1")
    p = make_pipeline(TFMODEL, tmp_path, services={"lookup": FixtureService(b"fx")})
    p.run_reactive(events(10))
    text = p.registry.render_checkpoint("predict")
    lines = text.splitlines()
    assert lines[0] == "New process timeline for ( predict )"
    assert lines[2].startswith("Unix clock context              | root --> NOW,delta")
    assert lines[3] == "-" * 90
    assert lines[4].split("|")[1].startswith("    0 -->   1,1      Snapshot")
    lookup = next(line for line in lines if "[implicit lookup: lookup" in line)
    assert "|       ->   1," in lookup
    assert any("[remarked: : predict read 2 inputs]" in line for line in lines)
    assert all(line[32] == "|" for line in lines[4:])


def test_checkpoint_failure_and_trigger(tmp_path):
    from conftest import script
    p = make_pipeline(CHAIN2, tmp_path, bindings={"A": {"exec": script("fail.py")}})
    p.run_reactive(events(1))
    p.apply_trigger(UpdateTrigger("software_update", "A", "2"))
    text = p.registry.render_checkpoint("A")
    assert "boom" in text and "[exit status: 3]" in text
    assert "Trigger software_update A -> 2" in text


def test_concept_map_dedup(tmp_path):
    p = make_pipeline(CHAIN2, tmp_path)
    p.run_reactive(events(100))
    edges = p.registry.concept_map()
    assert [e for e in edges if e.relation == "precedes"] == [ConceptEdge("A", "B", "precedes")]
    assert ConceptEdge("A", "in", "may_determine") in edges


def test_concept_map_lookup_and_independence(tmp_path):
    spec = TFMODEL + "(other) X (y)\n(y) Y (z)\n"
    p = make_pipeline(spec, tmp_path, services={"lookup": FixtureService(b"fx")})
    p.run_reactive(events(10) + events(2, "other"))
    edges = p.registry.concept_map()
    assert ConceptEdge("predict", "lookup", "may_determine") in edges
    tf = {"learn-tf", "server", "convert", "predict", "in", "lookup"}
    other = {"X", "Y", "other"}
    for e in edges:
        assert {e.frm, e.to} <= tf or {e.frm, e.to} <= other
    text = p.registry.render_concept_map()
    assert '(predict) --b(may determine)--> "lookup"' in text
    assert '(X) --b(precedes)--> "Y"' in text


def test_concept_edge_vocabulary():
    with pytest.raises(ValueError):
        ConceptEdge("a", "b", "causes")
    assert str(ConceptEdge("a", "b", "precedes")) == '(a) --b(precedes)--> "b"'


def test_replay_reproduces_renderings(chain_run):
    p, rep, reg = chain_run
    again = Registry.load(reg.path)
    assert again.events == reg.events
    av = rep.terminal[0].id
    assert again.render_traveller(av) == reg.render_traveller(av)
    assert again.render_checkpoint("B") == reg.render_checkpoint("B")
    assert again.render_concept_map() == reg.render_concept_map()


def test_load_rejects_foreign_file(tmp_path):
    (tmp_path / "x.jsonl").write_text('{"format":"other"}\n')
    with pytest.raises(ValueError):
        Registry.load(tmp_path / "x.jsonl")


def test_format_clock():
    assert format_clock(0.0) == "1970-01-01 00:00:00 +0000 UTC"
