"""Causal event registry and the three views over it.

Every ingest, assembly, execution, cache replay, lookup and mint is appended
to a :class:`Registry` as a :class:`ProvenanceEvent`.  Nothing else is stored:
traveller logs, checkpoint logs and the concept map are all derived from the
event sequence, so reloading a registry file reproduces them exactly.
"""
from __future__ import annotations

import json
import os
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

__all__ = [
    "EVENT_KINDS",
    "ProvenanceEvent",
    "Hop",
    "ConceptEdge",
    "Registry",
    "REGISTRY_FORMAT",
]

REGISTRY_FORMAT = {"format": "smartpipe-registry", "version": 1}

EVENT_KINDS = (
    "ingest", "enqueue", "assemble", "exec_start", "exec_end",
    "cache_hit", "implicit_lookup", "mint", "evict", "trigger",
)


@dataclass(frozen=True)
class ProvenanceEvent:
    run: str
    seq: int
    kind: str
    task: str | None = None
    wire: str | None = None
    av: str | None = None
    snapshot: str | None = None
    code_version: str | None = None
    wall: float = 0.0
    logical: float = 0.0
    inputs: tuple = ()
    digests: tuple = ()
    payload: str | None = None
    cause: int | None = None
    ref: str | None = None
    cached: bool = False
    status: int | None = None
    detail: str = ""

    def to_json(self) -> str:
        d = asdict(self)
        d["inputs"] = list(self.inputs)
        d["digests"] = [list(p) for p in self.digests]
        return json.dumps(d, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ProvenanceEvent":
        d = json.loads(line)
        d["inputs"] = tuple(d["inputs"])
        d["digests"] = tuple(tuple(p) for p in d["digests"])
        return cls(**d)


QUERY_FIELDS = {f.name for f in fields(ProvenanceEvent)} - {"inputs", "digests", "wall", "logical", "detail"}


@dataclass(frozen=True)
class Hop:
    av: str
    wire: str
    kind: str  # ingest | exec | cache
    task: str
    code_version: str | None
    inputs: tuple[str, ...]
    digests: tuple[tuple[str, str], ...]
    wall: float
    cached: bool
    snapshot: str | None
    replay_of: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inputs"] = list(self.inputs)
        d["digests"] = [list(p) for p in self.digests]
        return d


@dataclass(frozen=True)
class ConceptEdge:
    frm: str
    to: str
    relation: str

    def __post_init__(self):
        if self.relation not in ("precedes", "may_determine"):
            raise ValueError(f"unknown relation {self.relation!r}")

    def __str__(self) -> str:
        label = self.relation.replace("_", " ")
        return f'({self.frm}) --b({label})--> "{self.to}"'


def format_clock(wall: float) -> str:
    return datetime.fromtimestamp(wall, tz=timezone.utc).strftime("%Y-%m-%d %H:%M:%S %z %Z")


def _short(x: str | None, n: int = 12) -> str:
    if x is None:
        return "-"
    return x[:4 + n] if x.startswith("cas:") else x[:n]


class Registry:
    """Append-only event log, optionally mirrored line by line to a file."""

    def __init__(self, path: str | os.PathLike | None = None, clock: Callable[[], float] = time.time):
        self.path = Path(path) if path is not None else None
        self.clock = clock
        self._events: list[ProvenanceEvent] = []
        self._mints: dict[str, ProvenanceEvent] = {}
        self._by_seq: dict[int, ProvenanceEvent] = {}
        self._lock = threading.Lock()
        if self.path is not None:
            if self.path.exists() and self.path.stat().st_size:
                self._read(self.path)
            else:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self.path.write_text(json.dumps(REGISTRY_FORMAT) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Registry":
        reg = cls()
        reg._read(Path(path))
        return reg

    def _read(self, path: Path) -> None:
        lines = path.read_text().splitlines()
        if not lines:
            return
        header = json.loads(lines[0])
        if header.get("format") != REGISTRY_FORMAT["format"]:
            raise ValueError(f"{path} is not a registry file")
        if header.get("version") != REGISTRY_FORMAT["version"]:
            raise ValueError(f"unsupported registry version {header.get('version')}")
        for line in lines[1:]:
            if line.strip():
                self._index(ProvenanceEvent.from_json(line))

    def _index(self, ev: ProvenanceEvent) -> None:
        self._events.append(ev)
        self._by_seq[ev.seq] = ev
        if ev.kind == "mint":
            self._mints[ev.av] = ev

    def record(self, kind: str, run: str, *, logical: float = 0.0, **kw) -> ProvenanceEvent:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        with self._lock:
            seq = self._events[-1].seq + 1 if self._events else 1
            ev = ProvenanceEvent(run, seq, kind, wall=self.clock(), logical=logical, **kw)
            self._index(ev)
            if self.path is not None:
                with open(self.path, "a") as fh:
                    fh.write(ev.to_json() + "\n")
            return ev

    @property
    def events(self) -> list[ProvenanceEvent]:
        return list(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def event(self, seq: int) -> ProvenanceEvent:
        return self._by_seq[seq]

    def mint_of(self, av_id: str) -> ProvenanceEvent:
        try:
            return self._mints[av_id]
        except KeyError:
            raise KeyError(f"unknown value id {av_id!r}") from None

    def runs(self) -> list[str]:
        return list(dict.fromkeys(e.run for e in self._events))

    # queries

    def query(self, where: dict | None = None, seq_range: tuple[int, int] | None = None,
              time_range: tuple[float, float] | None = None) -> list[ProvenanceEvent]:
        """Exact-match conjunction over event fields, in sequence order.

        ``av`` matches the value an event is about and values listed among its
        inputs.  Ranges are inclusive.
        """
        where = dict(where or {})
        bad = set(where) - QUERY_FIELDS
        if bad:
            raise ValueError(f"unknown query field(s): {', '.join(sorted(bad))}")
        out = []
        for e in self._events:
            if seq_range and not seq_range[0] <= e.seq <= seq_range[1]:
                continue
            if time_range and not time_range[0] <= e.wall <= time_range[1]:
                continue
            ok = True
            for k, v in where.items():
                if k == "av":
                    ok = e.av == v or v in e.inputs
                else:
                    ok = getattr(e, k) == v
                if not ok:
                    break
            if ok:
                out.append(e)
        return out

    # traveller log

    def traveller(self, av_id: str) -> list[Hop]:
        """Hops from ``av_id`` back to its ingest events, breadth first."""
        self.mint_of(av_id)
        hops: list[Hop] = []
        todo = deque([av_id])
        seen = {av_id}
        while todo:
            cur = todo.popleft()
            m = self.mint_of(cur)
            cause = self._by_seq[m.cause]
            if cause.kind == "ingest":
                hops.append(Hop(cur, m.wire, "ingest", m.task, m.code_version, (), (), m.wall,
                                False, None))
                continue
            hops.append(Hop(cur, m.wire, "cache" if cause.cached else "exec", cause.task,
                            cause.code_version, cause.inputs, cause.digests, cause.wall,
                            cause.cached, cause.snapshot, cause.ref if cause.cached else None))
            for i in cause.inputs:
                if i not in seen:
                    seen.add(i)
                    todo.append(i)
        return hops

    def render_traveller(self, av_id: str) -> str:
        lines = [f"Traveller log for {av_id}"]
        for n, h in enumerate(self.traveller(av_id), start=1):
            clock = format_clock(h.wall)
            if h.kind == "ingest":
                lines.append(f"{n:>3}. {clock}  ingest   {h.wire} -> {_short(h.av)}")
                continue
            tag = "cache" if h.cached else "exec "
            lines.append(f"{n:>3}. {clock}  {tag}    {h.task} v{h.code_version} -> "
                         f"{h.wire} {_short(h.av)} snapshot {_short(h.snapshot)}")
            if h.replay_of:
                lines.append(f"       replay of snapshot {_short(h.replay_of)}")
            if h.inputs:
                lines.append("       inputs " + " ".join(_short(i) for i in h.inputs))
            for wire, digest in h.digests:
                lines.append(f"       lookup {wire} = {_short(digest)}")
        return "\n".join(lines) + "\n"

    # checkpoint log

    def checkpoint(self, task: str) -> list[tuple[float, int, int, int | None, str]]:
        """Entries ``(wall, major, minor, previous major or None, text)``.

        A new major number opens at each snapshot or trigger reaching the task;
        the events inside that execution become its minor annotations.
        """
        mine = [e for e in self._events if e.task == task and e.kind in
                ("assemble", "exec_start", "exec_end", "cache_hit", "implicit_lookup", "mint", "trigger")]
        if not mine and not any(e.task == task for e in self._events):
            raise KeyError(f"unknown task {task!r}")
        rows = []
        major = minor = 0
        for e in mine:
            if e.kind in ("assemble", "trigger") or major == 0:
                prev, major, minor = major, major + 1, 1
                rows.append((e.wall, major, minor, prev, self._major_text(e)))
                if e.kind == "assemble":
                    for slot, ids in self._slot_groups(e):
                        minor += 1
                        rows.append((e.wall, major, minor, None, f"[input: {slot} {' '.join(ids)}]"))
                if e.kind in ("assemble", "trigger"):
                    continue
            for text in self._minor_texts(e):
                minor += 1
                rows.append((e.wall, major, minor, None, text))
        return rows

    def _slot_groups(self, e: ProvenanceEvent):
        groups: dict[str, list[str]] = {}
        for av in e.inputs:
            m = self._mints.get(av)
            groups.setdefault(m.wire if m else "?", []).append(av[:8])
        return groups.items()

    @staticmethod
    def _major_text(e: ProvenanceEvent) -> str:
        if e.kind == "trigger":
            return f"Trigger {e.detail}"
        note = f" ({e.detail})" if e.detail else ""
        return f"Snapshot {_short(e.snapshot)} assembled{note}"

    @staticmethod
    def _minor_texts(e: ProvenanceEvent) -> list[str]:
        if e.kind == "implicit_lookup":
            return [f"[implicit lookup: {e.wire} -> {_short(e.payload)}]"]
        if e.kind == "exec_start":
            return [f"[exec: {e.detail} code version {e.code_version}]"]
        if e.kind == "cache_hit":
            return [f"[cache hit: replay of snapshot {_short(e.ref)}]"]
        if e.kind == "mint":
            what = "ghost" if e.payload is None else _short(e.payload)
            return [f"[output: {e.wire} {e.av[:8]} {what}]"]
        if e.kind == "exec_end":
            out = [line for line in e.detail.splitlines() if line.strip()]
            if e.status is None and not e.cached:
                out.append("[ghost: user code skipped]" if e.ref == "ghost" else "[failed: no process result]")
            else:
                out.append(f"[exit status: {e.status}]")
            return out
        return [e.detail or e.kind]

    def render_checkpoint(self, task: str) -> str:
        lines = [
            f"New process timeline for ( {task} )",
            "",
            f"{'Unix clock context':<32}| root --> NOW,delta  Comment indented by subtime",
            "-" * 90,
        ]
        for wall, major, minor, prev, text in self.checkpoint(task):
            left = f"{prev:>5} -->" if prev is not None else f"{'->':>9}"
            indent = " " * (6 + 2 * (minor - 1))
            lines.append(f"{format_clock(wall):<32}|{left} {major:>3},{minor}{indent}{text}")
        return "\n".join(lines) + "\n"

    # concept map

    def concept_map(self) -> list[ConceptEdge]:
        """Deduplicated ``precedes`` / ``may_determine`` edges over tasks and inputs."""
        edges: dict[tuple, ConceptEdge] = {}

        def add(frm, to, rel):
            edges.setdefault((frm, to, rel), ConceptEdge(frm, to, rel))

        for e in self._events:
            if e.kind in ("exec_end", "cache_hit"):
                for av in e.inputs:
                    m = self._mints.get(av)
                    if m is None:
                        continue
                    cause = self._by_seq[m.cause]
                    if cause.kind == "ingest":
                        add(e.task, m.wire, "may_determine")
                    else:
                        add(cause.task, e.task, "precedes")
            elif e.kind == "implicit_lookup":
                add(e.task, e.wire, "may_determine")
        return list(edges.values())

    def render_concept_map(self) -> str:
        edges = self.concept_map()
        prec = [e for e in edges if e.relation == "precedes"]
        targets = {e.to for e in prec}
        depth = {e.frm: 0 for e in prec if e.frm not in targets}
        todo = deque(depth)
        while todo:
            cur = todo.popleft()
            for e in prec:
                if e.frm == cur and e.to not in depth:
                    depth[e.to] = depth[cur] + 1
                    todo.append(e.to)
        lines = ["<begin NON-LOCAL CAUSE>"]
        for e in prec + [e for e in edges if e.relation != "precedes"]:
            lines.append("  " * depth.get(e.frm, 0) + str(e))
        lines.append("<end NON-LOCAL CAUSE>")
        return "\n".join(lines) + "\n"
