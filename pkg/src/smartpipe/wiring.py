"""Pipeline wiring language.

A pipeline is written one task per line::

    [tfmodel]
    (in) learn-tf (model)
    (model) server (lookup implicit)
    (in[10/2]) convert (json)
    (json, lookup implicit) predict (result)

Each line reads ``(input slots) task (outputs)``.  An input slot is a wire
name optionally followed by ``[N]`` (buffer of N values), ``[N/S]`` (window of
N values sliding S at a time) or the keyword ``implicit`` (a client-server
lookup rather than a data wire).  ``#`` starts a comment and a ``[name]``
line names the pipeline.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, NamedTuple

import networkx as nx
from scipy import sparse

__all__ = [
    "InputSlot",
    "TaskDecl",
    "WireDecl",
    "PipelineSpec",
    "Diagnostic",
    "Adjacency",
    "WiringError",
    "parse",
    "validate",
    "adjacency",
    "render",
    "task_graph",
    "reachable",
]

IDENT = r"[A-Za-z_][A-Za-z0-9_.\-]*"
_IDENT_RE = re.compile(rf"^{IDENT}$")
_HEADER_RE = re.compile(rf"^\[\s*({IDENT})\s*\]$")
_LINE_RE = re.compile(r"^\((?P<ins>[^()]*)\)\s*(?P<name>[^\s()]+)\s*\((?P<outs>[^()]*)\)$")
_SLOT_RE = re.compile(
    rf"^(?P<wire>{IDENT})"
    r"(?:\[(?P<n>[^\]/]*)(?:/(?P<s>[^\]]*))?\])?"
    r"(?:\s+(?P<kw>\S+))?$"
)


class WiringError(ValueError):
    """Raised for unparseable wiring text or for specs that fail validation."""

    def __init__(self, message: str, line: int = 0, column: int = 0, code: str = "syntax"):
        self.line = line
        self.column = column
        self.code = code
        where = f"line {line}, column {column}: " if line else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class InputSlot:
    wire: str
    buffer_min: int = 1
    window_size: int | None = None
    slide: int | None = None
    kind: str = "stream"

    def __post_init__(self):
        if self.kind not in ("stream", "implicit"):
            raise ValueError(f"unknown slot kind {self.kind!r}")
        if self.buffer_min < 1:
            raise ValueError("buffer_min must be >= 1")
        if self.window_size is not None:
            if self.slide is None or not 1 <= self.slide <= self.window_size:
                raise ValueError(f"window [{self.window_size}/{self.slide}] needs 1 <= slide <= size")
        elif self.slide is not None:
            raise ValueError("slide given without window size")
        if self.kind == "implicit" and (self.window_size is not None or self.buffer_min != 1):
            raise ValueError("implicit slots take no buffer or window")

    @property
    def implicit(self) -> bool:
        return self.kind == "implicit"

    @property
    def windowed(self) -> bool:
        return self.window_size is not None

    @property
    def required(self) -> int:
        """Number of values one snapshot carries on this slot."""
        return self.window_size if self.window_size is not None else self.buffer_min

    def __str__(self) -> str:
        if self.implicit:
            return f"{self.wire} implicit"
        if self.window_size is not None:
            return f"{self.wire}[{self.window_size}/{self.slide}]"
        if self.buffer_min != 1:
            return f"{self.wire}[{self.buffer_min}]"
        return self.wire


@dataclass(frozen=True)
class TaskDecl:
    name: str
    inputs: tuple[InputSlot, ...] = ()
    outputs: tuple[str, ...] = ()
    # implicit outputs: services this task stands behind
    services: tuple[str, ...] = ()
    exec: tuple[str, ...] = ()
    code_version: str = "0"
    line: int = field(default=0, compare=False)

    def __post_init__(self):
        if not (self.inputs or self.outputs or self.services):
            raise ValueError(f"task {self.name!r} has neither inputs nor outputs")
        if not self.code_version:
            raise ValueError(f"task {self.name!r} has an empty code_version")

    @property
    def stream_inputs(self) -> tuple[InputSlot, ...]:
        return tuple(s for s in self.inputs if not s.implicit)

    @property
    def implicit_inputs(self) -> tuple[InputSlot, ...]:
        return tuple(s for s in self.inputs if s.implicit)

    @property
    def argv(self) -> tuple[str, ...]:
        return self.exec or (self.name,)


class WireDecl(NamedTuple):
    """One producer-to-consumer match of a wire name.

    ``producer`` is None for source wires, ``consumer`` None for sinks.
    """

    name: str
    producer: str | None
    consumer: str | None
    implicit: bool = False


@dataclass(frozen=True)
class PipelineSpec:
    name: str = "pipeline"
    tasks: tuple[TaskDecl, ...] = ()

    def task(self, name: str) -> TaskDecl:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"no task named {name!r}") from None

    @cached_property
    def _by_name(self) -> dict[str, TaskDecl]:
        return {t.name: t for t in self.tasks}

    @property
    def task_names(self) -> list[str]:
        return [t.name for t in self.tasks]

    def index(self, name: str) -> int:
        return self.task_names.index(name)

    def producers(self, wire: str) -> list[str]:
        """Tasks listing ``wire`` among their data outputs."""
        return [t.name for t in self.tasks if wire in t.outputs]

    def providers(self, wire: str) -> list[str]:
        """Tasks listing ``wire`` as an implicit output."""
        return [t.name for t in self.tasks if wire in t.services]

    def consumers(self, wire: str, implicit: bool = False) -> list[str]:
        kind = "implicit" if implicit else "stream"
        return [t.name for t in self.tasks if any(s.wire == wire and s.kind == kind for s in t.inputs)]

    @property
    def sources(self) -> list[str]:
        """Data wires that are consumed but never produced, in first-use order."""
        out: list[str] = []
        for t in self.tasks:
            for s in t.stream_inputs:
                if s.wire not in out and not self.producers(s.wire) and not self.providers(s.wire):
                    out.append(s.wire)
        return out

    @property
    def wires(self) -> list[WireDecl]:
        out: list[WireDecl] = []
        seen = set()
        for t in self.tasks:
            for s in t.inputs:
                makers = self.providers(s.wire) if s.implicit else self.producers(s.wire)
                for p in makers or [None]:
                    w = WireDecl(s.wire, p, t.name, s.implicit)
                    if w not in seen:
                        seen.add(w)
                        out.append(w)
        for t in self.tasks:
            for name in t.outputs:
                if not self.consumers(name):
                    out.append(WireDecl(name, t.name, None, False))
            for name in t.services:
                if not self.consumers(name, implicit=True):
                    out.append(WireDecl(name, t.name, None, True))
        return out

    def with_task(self, name: str, **changes) -> "PipelineSpec":
        return PipelineSpec(self.name, tuple(replace(t, **changes) if t.name == name else t for t in self.tasks))


class Span(NamedTuple):
    line: int
    column: int
    end_column: int


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    location: Span
    message: str
    code: str

    def __str__(self) -> str:
        loc = f"{self.location.line}:{self.location.column}"
        return f"{loc}: {self.severity} [{self.code}] {self.message}"

    def to_dict(self) -> dict:
        return {
            "severity": self.severity,
            "line": self.location.line,
            "column": self.location.column,
            "end_column": self.location.end_column,
            "code": self.code,
            "message": self.message,
        }


def _parse_int(text: str | None, what: str, lineno: int, col: int) -> int:
    if text is None or not text.strip().isdigit():
        raise WiringError(f"malformed {what} {text!r}", lineno, col, "window")
    return int(text)


def _parse_entry(text: str, lineno: int, col: int, output: bool) -> InputSlot:
    m = _SLOT_RE.match(text)
    if not m:
        raise WiringError(f"malformed {'output' if output else 'slot'} {text!r}", lineno, col)
    kw = m.group("kw")
    if kw is not None and kw != "implicit":
        raise WiringError(f"unknown keyword {kw!r}", lineno, col + m.start("kw"))
    n, s = m.group("n"), m.group("s")
    if n is None:
        return InputSlot(m.group("wire"), kind="implicit" if kw else "stream")
    if kw or output:
        raise WiringError(f"buffer spec not allowed on {text!r}", lineno, col)
    size = _parse_int(n, "buffer size", lineno, col + m.start("n"))
    if s is None:
        if size < 1:
            raise WiringError(f"buffer size must be positive in {text!r}", lineno, col, "window")
        return InputSlot(m.group("wire"), buffer_min=size)
    slide = _parse_int(s, "window slide", lineno, col + m.start("s"))
    if size < 1 or not 1 <= slide <= size:
        raise WiringError(f"window [{size}/{slide}] needs size >= 1 and 1 <= slide <= size", lineno, col, "window")
    return InputSlot(m.group("wire"), window_size=size, slide=slide)


def _split(body: str, lineno: int, col0: int, output: bool) -> list[InputSlot]:
    if not body.strip():
        return []
    entries = []
    pos = 0
    for piece in body.split(","):
        stripped = piece.strip()
        col = col0 + pos + (len(piece) - len(piece.lstrip())) + 1
        if not stripped:
            raise WiringError("empty list entry", lineno, col)
        entries.append(_parse_entry(stripped, lineno, col, output))
        pos += len(piece) + 1
    return entries


def parse(text: str) -> PipelineSpec:
    """Parse wiring text into a :class:`PipelineSpec`.

    Raises :class:`WiringError` carrying line and column on syntax errors,
    duplicate task names and malformed windows such as ``[0/2]`` or ``[3/5]``.
    """
    name = None
    tasks: list[TaskDecl] = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        stripped = line.strip()
        if not stripped:
            continue
        indent = len(line) - len(line.lstrip())
        if stripped.startswith("["):
            m = _HEADER_RE.match(stripped)
            if not m:
                raise WiringError(f"malformed header {stripped!r}", lineno, indent + 1)
            if name is not None or tasks:
                raise WiringError("pipeline name must come first and only once", lineno, indent + 1)
            name = m.group(1)
            continue
        m = _LINE_RE.match(stripped)
        if not m:
            raise WiringError("expected '(inputs) task (outputs)'", lineno, indent + 1)
        task = m.group("name")
        if not _IDENT_RE.match(task):
            raise WiringError(f"bad task name {task!r}", lineno, indent + m.start("name") + 1)
        if task in seen:
            raise WiringError(f"duplicate task {task!r} (first on line {seen[task]})",
                              lineno, indent + m.start("name") + 1, "duplicate")
        seen[task] = lineno
        inputs = _split(m.group("ins"), lineno, indent + m.start("ins"), output=False)
        outs = _split(m.group("outs"), lineno, indent + m.start("outs"), output=True)
        for group, what in ((inputs, "input slot"), (outs, "output")):
            names = [e.wire for e in group]
            dup = next((n for n in names if names.count(n) > 1), None)
            if dup:
                raise WiringError(f"{what} {dup!r} listed twice on task {task!r}", lineno, indent + 1, "duplicate")
        if not inputs and not outs:
            raise WiringError(f"task {task!r} has neither inputs nor outputs", lineno, indent + 1)
        tasks.append(TaskDecl(
            task,
            tuple(inputs),
            tuple(o.wire for o in outs if not o.implicit),
            tuple(o.wire for o in outs if o.implicit),
            line=lineno,
        ))
    return PipelineSpec(name or "pipeline", tuple(tasks))


def render(spec: PipelineSpec) -> str:
    """Canonical text: header line then one task per line in declaration order."""
    lines = [f"[{spec.name}]"]
    for t in spec.tasks:
        ins = ", ".join(str(s) for s in t.inputs)
        outs = ", ".join([*t.outputs, *(f"{w} implicit" for w in t.services)])
        lines.append(f"({ins}) {t.name} ({outs})")
    return "\n".join(lines) + "\n"


def task_graph(spec: PipelineSpec, implicit: bool = False) -> nx.MultiDiGraph:
    """Task-level graph with one edge per wire match; implicit edges only on request."""
    g = nx.MultiDiGraph()
    g.add_nodes_from(spec.task_names)
    for w in spec.wires:
        if w.producer and w.consumer and (implicit or not w.implicit):
            g.add_edge(w.producer, w.consumer, key=(w.name, w.implicit), wire=w.name, implicit=w.implicit)
    return g


def _cycles(spec: PipelineSpec) -> list[list[str]]:
    g = nx.DiGraph(task_graph(spec))
    order = {n: i for i, n in enumerate(spec.task_names)}
    found = []
    for cyc in nx.simple_cycles(g):
        k = min(range(len(cyc)), key=lambda i: order[cyc[i]])
        found.append(cyc[k:] + cyc[:k])
    found.sort(key=lambda c: [order[n] for n in c])
    return found


def validate(spec: PipelineSpec) -> list[Diagnostic]:
    """Topological checks; problems come back as diagnostics, never raised."""
    diags: list[Diagnostic] = []

    def at(task: TaskDecl | None) -> Span:
        return Span(task.line if task else 0, 1, 1)

    def add(sev, task, msg, code):
        diags.append(Diagnostic(sev, at(task), msg, code))

    names: set[str] = set()
    for t in spec.tasks:
        if t.name in names:
            add("error", t, f"duplicate task {t.name!r}", "E003")
        names.add(t.name)

    reported: set[str] = set()
    for t in spec.tasks:
        for w in (*t.outputs, *t.services):
            makers = spec.producers(w) + spec.providers(w)
            if len(makers) > 1 and w not in reported:
                reported.add(w)
                add("error", t, f"wire {w!r} has {len(makers)} producers: {', '.join(makers)}", "E001")

    for t in spec.tasks:
        for s in t.inputs:
            if s.implicit:
                if spec.producers(s.wire):
                    add("error", t, f"implicit slot {s.wire!r} on {t.name!r} names a data wire", "E002")
                elif not spec.providers(s.wire):
                    add("info", t, f"implicit {s.wire!r} on {t.name!r} is an external service", "I002")
            elif spec.providers(s.wire) and not spec.producers(s.wire):
                add("error", t, f"wire {s.wire!r} consumed by {t.name!r} has no data producer "
                                f"(only an implicit service)", "E002")

    for w in spec.sources:
        first = next(t for t in spec.tasks if any(s.wire == w for s in t.stream_inputs))
        add("info", first, f"wire {w!r} is a source (ingress)", "I001")

    for t in spec.tasks:
        for w in t.outputs:
            if not spec.consumers(w):
                add("warning", t, f"output {w!r} of {t.name!r} is not consumed", "W001")
        for w in t.services:
            if not spec.consumers(w, implicit=True):
                add("warning", t, f"service {w!r} of {t.name!r} is not consulted", "W001")

    for cyc in _cycles(spec):
        add("info", spec.task(cyc[0]), "cycle: " + " -> ".join([*cyc, cyc[0]]), "I003")
    return diags


class Adjacency(NamedTuple):
    tasks: list[str]
    data: sparse.csr_matrix
    implicit: sparse.csr_matrix

    def count(self, a: str, b: str, implicit: bool = False) -> int:
        m = self.implicit if implicit else self.data
        return int(m[self.tasks.index(a), self.tasks.index(b)])


def adjacency(spec: PipelineSpec) -> Adjacency:
    """Wire-count matrices over task indices: entry (a, b) counts wires a -> b."""
    errors = [d for d in validate(spec) if d.severity == "error"]
    if errors:
        raise WiringError("; ".join(d.message for d in errors), code="invalid")
    n = len(spec.tasks)
    idx = {name: i for i, name in enumerate(spec.task_names)}
    data = sparse.dok_matrix((n, n), dtype=int)
    imp = sparse.dok_matrix((n, n), dtype=int)
    for w in spec.wires:
        if w.producer and w.consumer:
            m = imp if w.implicit else data
            m[idx[w.producer], idx[w.consumer]] += 1
    return Adjacency(spec.task_names, data.tocsr(), imp.tocsr())


def reachable(spec: PipelineSpec, start: Iterable[str], implicit: bool = True) -> list[str]:
    """Tasks forward-reachable from ``start`` (inclusive), in declaration order."""
    g = task_graph(spec, implicit=implicit)
    hit: set[str] = set()
    for s in start:
        hit.add(s)
        hit |= nx.descendants(g, s)
    return [n for n in spec.task_names if n in hit]
