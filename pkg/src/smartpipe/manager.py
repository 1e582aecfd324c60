"""Pipeline manager: drives link and task agents over a simulated clock.

Two trigger modes share one engine:

* :meth:`Pipeline.run_reactive` pushes source events in at the input end and
  lets data propagate until the stop condition.
* :meth:`Pipeline.run_pull` starts from a requested target and rebuilds its
  dependencies backwards, reusing cached results wherever the cache key
  (task, code version, input payloads, lookup digests) still matches.

Scheduling runs on a simulated clock, so a deterministic run with a fixed
seed reproduces ids, snapshot keys and routing exactly.
"""
from __future__ import annotations

import heapq
import json
import logging
import os
import time
import uuid
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Sequence

import networkx as nx

from .links import LinkState, Snapshot, SnapshotPolicy
from .provenance import Registry
from .store import AnnotatedValue, ContentStore, Minter
from .tasks import ExecutionRecord, FixtureService, ResultCache, TaskAgent, TaskRuntime
from .wiring import PipelineSpec, WiringError, reachable, task_graph, validate

__all__ = [
    "RunConfig",
    "UpdateTrigger",
    "InvalidationReport",
    "FeedEvent",
    "RoutingEntry",
    "RunReport",
    "Pipeline",
    "RunError",
    "load_events",
    "drop_directory",
    "SOURCE_TASK",
]

log = logging.getLogger(__name__)

SOURCE_TASK = "source"
SOURCE_VERSION = "-"
DEFAULT_EPOCH = 1_700_000_000.0


class RunError(RuntimeError):
    """A run could not proceed: bad feed, missing source value, unseeded cycle."""


@dataclass
class RunConfig:
    mode: str = "reactive"
    target: str | None = None
    max_cycle_iterations: int = 10
    deterministic: bool = True
    seed: int = 0
    stop: str = "quiescence"  # quiescence | events | deadline
    max_events: int | None = None
    deadline: float | None = None  # seconds of real time
    workers: int = 1
    ghost: bool = False
    queue_capacity: int | None = None
    service_time: float = 0.1
    notify_threshold: float = 10.0
    epoch: float = DEFAULT_EPOCH

    def __post_init__(self):
        if self.mode not in ("reactive", "pull"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "pull" and not self.target:
            raise ValueError("pull mode needs a target")
        if self.max_cycle_iterations < 1:
            raise ValueError("max_cycle_iterations must be >= 1")
        if self.stop not in ("quiescence", "events", "deadline"):
            raise ValueError(f"unknown stop condition {self.stop!r}")


@dataclass(frozen=True)
class UpdateTrigger:
    kind: str  # sample_update | software_update | service_update
    subject: str
    new_version: str | None = None
    payload: bytes | None = None

    def __post_init__(self):
        if self.kind not in ("sample_update", "software_update", "service_update"):
            raise ValueError(f"unknown trigger kind {self.kind!r}")
        if self.kind == "software_update" and not self.new_version:
            raise ValueError("software_update needs new_version")


@dataclass
class InvalidationReport:
    trigger: UpdateTrigger
    stale: list[str]
    injected: str | None = None


@dataclass(frozen=True)
class FeedEvent:
    wire: str
    delay_ms: float = 0.0
    payload: bytes | None = None
    path: str | None = None

    def data(self) -> bytes:
        if self.payload is not None:
            return self.payload
        if self.path is not None:
            return Path(self.path).read_bytes()
        return b""


def load_events(path: str | os.PathLike) -> list[FeedEvent]:
    """Rows of ``<wire> <delay-ms> <payload-path>``; delays are relative to the previous row."""
    path = Path(path)
    out = []
    for n, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 2)
        if len(parts) != 3:
            raise ValueError(f"{path}:{n}: expected '<wire> <delay-ms> <payload-path>'")
        wire, delay, payload = parts
        p = Path(payload)
        if not p.is_absolute():
            p = path.parent / p
        out.append(FeedEvent(wire, float(delay), path=str(p)))
    return out


def drop_directory(directory: str | os.PathLike, wire: str, spacing_ms: float = 0.0) -> list[FeedEvent]:
    """Files dropped in ``directory``, oldest name first, as events on ``wire``."""
    files = sorted(p for p in Path(directory).iterdir() if p.is_file())
    return [FeedEvent(wire, spacing_ms, path=str(p)) for p in files]


def _timeline(sources) -> list[tuple[float, int, FeedEvent]]:
    """Absolute (ms, order, event) triples from a flat list or a wire -> feed map."""
    if not sources:
        return []
    if isinstance(sources, Mapping):
        rows = []
        for w_idx, (wire, feed) in enumerate(sources.items()):
            if isinstance(feed, (bytes, bytearray, str, FeedEvent)):
                feed = [feed]
            t = 0.0
            for i, ev in enumerate(feed):
                if isinstance(ev, str):
                    ev = ev.encode()
                if not isinstance(ev, FeedEvent):
                    ev = FeedEvent(wire, 0.0, payload=bytes(ev))
                t += ev.delay_ms
                rows.append((t, w_idx, i, ev))
        rows.sort(key=lambda r: (r[0], r[2], r[1]))
        return [(t, n, ev) for n, (t, _, _, ev) in enumerate(rows)]
    out, t = [], 0.0
    for n, ev in enumerate(sources):
        t += ev.delay_ms
        out.append((t, n, ev))
    return out


class RoutingEntry(NamedTuple):
    """One traversal of a value over a wire into a consuming task.

    Values are labelled ``task/wire#n`` by producer and per-producer counter,
    which is independent of ids and payloads, so ghost and real runs compare.
    """

    av: str
    parents: tuple[str, ...]
    wire: str
    consumer: str


@dataclass
class RunReport:
    run: str
    mode: str
    ghost: bool = False
    executions: list[ExecutionRecord] = field(default_factory=list)
    snapshots: dict[str, int] = field(default_factory=dict)
    routing: list[RoutingEntry] = field(default_factory=list)
    terminal: list[AnnotatedValue] = field(default_factory=list)
    target: list[AnnotatedValue] = field(default_factory=list)
    nodes: dict[str, str] = field(default_factory=dict)
    links: dict[str, dict] = field(default_factory=dict)
    dropped: int = 0
    events_processed: int = 0
    stopped_by: str = "quiescence"

    @property
    def invocations(self) -> int:
        return sum(1 for r in self.executions if r.invoked)

    @property
    def cache_hits(self) -> int:
        return sum(1 for r in self.executions if r.cached)

    def executions_of(self, task: str) -> list[ExecutionRecord]:
        return [r for r in self.executions if r.task == task]

    def records(self) -> list[dict]:
        out = [{"record": "run", "run": self.run, "mode": self.mode, "ghost": self.ghost,
                "invocations": self.invocations, "cache_hits": self.cache_hits,
                "dropped": self.dropped, "events_processed": self.events_processed,
                "stopped_by": self.stopped_by}]
        out += [{"record": "execution", **r.to_dict()} for r in self.executions]
        out += [{"record": "snapshots", "task": t, "count": n} for t, n in self.snapshots.items()]
        out += [{"record": "link", "task": t, **stats} for t, stats in self.links.items()]
        out += [{"record": "route", "av": r.av, "parents": list(r.parents), "wire": r.wire,
                 "consumer": r.consumer} for r in self.routing]
        out += [{"record": "node", "task": t, "status": s} for t, s in self.nodes.items()]
        out += [{"record": "terminal", **av.to_dict()} for av in self.terminal]
        out += [{"record": "target", **av.to_dict()} for av in self.target]
        return out

    def dumps(self) -> str:
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self.records())

    def write(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.dumps())

    def summary(self) -> str:
        lines = [f"run {self.run} ({self.mode}{', ghost' if self.ghost else ''})",
                 f"  executions: {len(self.executions)}  invocations: {self.invocations}  "
                 f"cache hits: {self.cache_hits}  dropped: {self.dropped}"]
        for t, n in self.snapshots.items():
            lines.append(f"  snapshots {t}: {n}")
        for t, s in self.nodes.items():
            lines.append(f"  node {t}: {s}")
        for av in self.target:
            lines.append(f"  target {av.wire}: {av.id} {av.payload_ref or 'ghost'}")
        return "\n".join(lines) + "\n"


class SimClock:
    def __init__(self):
        self.now = 0.0


class Pipeline:
    """A pipeline instance: spec, agents, link state and run history.

    ``bindings`` maps task name to :class:`TaskRuntime` keyword arguments
    (``exec``, ``code_version``, ``min_execution_interval``, ...).
    ``services`` maps implicit wire names to callables ``bytes -> bytes``.
    ``policies`` maps task name to a :class:`SnapshotPolicy` (default all_new).
    """

    def __init__(self, spec: PipelineSpec, store: ContentStore, *,
                 config: RunConfig | None = None,
                 registry: Registry | None = None,
                 cache: ResultCache | None = None,
                 bindings: Mapping[str, Mapping] | None = None,
                 services: Mapping[str, Callable[[bytes], bytes]] | None = None,
                 policies: Mapping[str, SnapshotPolicy] | None = None):
        errors = [d for d in validate(spec) if d.severity == "error"]
        if errors:
            raise WiringError("; ".join(d.message for d in errors), code="invalid")
        self.spec = spec
        self.store = store
        self.config = config or RunConfig()
        self.clock = SimClock()
        cfg = self.config
        self.wall: Callable[[], float] = (lambda: cfg.epoch + self.clock.now) if cfg.deterministic else time.time
        self.minter = Minter(cfg.seed if cfg.deterministic else None, clock=self.wall)
        self.registry = registry if registry is not None else Registry()
        self.registry.clock = self.wall
        store.clock = self.wall
        self.cache = cache if cache is not None else ResultCache(store.root / "results.jsonl")
        self.services = dict(services or {})
        bindings = bindings or {}
        unknown = set(bindings) - set(spec.task_names)
        if unknown:
            raise KeyError(f"bindings for unknown task(s): {', '.join(sorted(unknown))}")
        self.runtimes = {t.name: TaskRuntime(t, **dict(bindings.get(t.name, {}))) for t in spec.tasks}
        self.policies = {t.name: SnapshotPolicy() for t in spec.tasks}
        self.policies.update(policies or {})
        self.links = {t.name: LinkState(t.inputs, cfg.queue_capacity) for t in spec.tasks}
        self.history: dict[str, list[AnnotatedValue]] = {}
        self.origins: dict[str, frozenset[str]] = {}
        self.stale: set[str] = set()
        self._graph = nx.DiGraph(task_graph(spec))
        self.cyclic = {n for comp in nx.strongly_connected_components(self._graph)
                       for n in comp if len(comp) > 1 or self._graph.has_edge(n, n)}
        self.output_classes = {}
        for t in spec.tasks:
            for w in t.outputs:
                combined = any(len(spec.task(c).stream_inputs) > 1 for c in spec.consumers(w))
                self.output_classes[w] = "intermediate-combined" if combined else "intermediate-simple"
        self.agents = {
            name: TaskAgent(rt, store, self.minter, self.registry, self.cache, self.services,
                            self.output_classes)
            for name, rt in self.runtimes.items()
        }
        self._labels: dict[str, str] = {}
        self._run_count = len(self.registry.runs())
        self._continue_registry()

    def _continue_registry(self) -> None:
        """Keep ids, counters and the simulated clock moving forward over an existing registry."""
        mints = self.registry.query({"kind": "mint"})
        for m in mints:
            self.minter.ids.add(m.av)
            key = (m.task, m.wire)
            self.minter.counters[key] = self.minter.counters.get(key, 0) + 1
        if len(self.registry):
            self.clock.now = max(e.logical for e in self.registry.events)

    # bookkeeping

    def _new_run(self) -> str:
        self._run_count += 1
        run = f"run-{self._run_count:04d}" if self.config.deterministic else f"run-{uuid.uuid4().hex[:12]}"
        for agent in self.agents.values():
            agent.run_id = run
        return run

    def _label(self, av: AnnotatedValue) -> str:
        return self._labels.setdefault(av.id, f"{av.source_task}/{av.wire}#{av.created_logical}")

    def _record(self, kind: str, run: str, **kw):
        return self.registry.record(kind, run, logical=self.clock.now, **kw)

    def _ingest(self, run: str, wire: str, data: bytes | None, ghost: bool) -> AnnotatedValue:
        uri = None if ghost else self.store.put(data or b"", "source")
        ev = self._record("ingest", run, wire=wire, payload=uri, task=SOURCE_TASK, code_version=SOURCE_VERSION)
        av = self.minter.mint(SOURCE_TASK, wire, uri, SOURCE_VERSION, ghost=ghost)
        self._record("mint", run, task=SOURCE_TASK, wire=wire, av=av.id, payload=uri,
                     code_version=SOURCE_VERSION, cause=ev.seq)
        self.history.setdefault(wire, []).append(av)
        self.origins[av.id] = frozenset([av.id])
        return av

    def _check_feed(self, wire: str) -> None:
        if not self.spec.consumers(wire):
            raise RunError(f"feed for undeclared source wire {wire!r}")

    def value(self, wire: str) -> AnnotatedValue | None:
        """Latest value seen on ``wire``."""
        vals = self.history.get(wire)
        return vals[-1] if vals else None

    # reactive mode

    def run_reactive(self, sources=None, config: RunConfig | None = None) -> RunReport:
        """Push ``sources`` in at the input end and propagate until the stop condition.

        ``sources`` is a list of :class:`FeedEvent` (delays relative to the
        previous event) or a mapping wire -> list of events or payload bytes.
        Values left pending in link queues (triggers, resumed state) are
        assembled first.
        """
        cfg = config or self.config
        run = self._new_run()
        report = RunReport(run, "reactive", ghost=cfg.ghost)
        timeline = _timeline(sources)
        for _, _, ev in timeline:
            self._check_feed(ev.wire)
        heap: list = []
        counter = iter(range(1 << 62))
        base = self.clock.now
        for t_ms, _, ev in timeline:
            heapq.heappush(heap, (base + t_ms / 1000.0, next(counter), "ingest", ev))
        pending: dict[str, deque[Snapshot]] = {n: deque() for n in self.spec.task_names}
        scheduled: set[str] = set()
        budget: dict[tuple[str, str], int] = {}
        report.snapshots = {n: 0 for n in self.spec.task_names}

        def schedule(task: str) -> None:
            if task not in scheduled and pending[task]:
                scheduled.add(task)
                heapq.heappush(heap, (self.runtimes[task].due(self.clock.now), next(counter), "execute", task))

        def assemble(task: str) -> None:
            link, policy = self.links[task], self.policies[task]
            while (snap := link.try_assemble(policy, self.clock.now)) is not None:
                report.snapshots[task] += 1
                origin = frozenset().union(*(self.origins.get(av.id, frozenset()) for av in snap.values))
                detail = ""
                if task in self.cyclic:
                    if any(budget.get((task, o), 0) >= cfg.max_cycle_iterations for o in origin):
                        detail = "dropped: cycle budget exhausted"
                    else:
                        for o in origin:
                            budget[(task, o)] = budget.get((task, o), 0) + 1
                self._record("assemble", run, task=task, snapshot=snap.key,
                             inputs=tuple(av.id for av in snap.values),
                             code_version=self.runtimes[task].code_version, detail=detail)
                if detail:
                    log.info("%s: snapshot %s dropped, cycle budget exhausted", task, snap.key[:12])
                    report.dropped += 1
                    continue
                pending[task].append(snap)
            schedule(task)

        def deliver(av: AnnotatedValue, parents: tuple[str, ...]) -> None:
            for consumer in self.spec.consumers(av.wire):
                report.routing.append(RoutingEntry(self._label(av), parents, av.wire, consumer))
                self.links[consumer].enqueue(av.wire, av, self.clock.now)
                self._record("enqueue", run, task=consumer, wire=av.wire, av=av.id)
                assemble(consumer)
            if not self.spec.consumers(av.wire):
                report.terminal.append(av)

        def finish(task: str, snap: Snapshot, rec: ExecutionRecord | None) -> None:
            if rec is None:
                return
            report.executions.append(rec)
            if not rec.ok:
                log.warning("%s failed on snapshot %s: %s", task, snap.key[:12], rec.error)
            self.stale.discard(task)
            origin = frozenset().union(*(self.origins.get(av.id, frozenset()) for av in snap.values))
            parents = tuple(self._label(av) for av in snap.values)
            for av in rec.output_values:
                self.history.setdefault(av.wire, []).append(av)
                self.origins[av.id] = origin
                deliver(av, parents)

        for task in self.spec.task_names:
            assemble(task)

        started = time.monotonic()
        pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 and not cfg.deterministic else None
        try:
            while heap:
                if cfg.stop == "events" and cfg.max_events is not None and report.events_processed >= cfg.max_events:
                    report.stopped_by = "events"
                    break
                if cfg.stop == "deadline" and cfg.deadline is not None and time.monotonic() - started > cfg.deadline:
                    report.stopped_by = "deadline"
                    break
                t, _, action, item = heapq.heappop(heap)
                self.clock.now = max(self.clock.now, t)
                report.events_processed += 1
                if action == "ingest":
                    av = self._ingest(run, item.wire, None if cfg.ghost else item.data(), cfg.ghost)
                    deliver(av, ())
                    continue
                batch = [item]
                if pool is not None:
                    while heap and heap[0][0] <= self.clock.now and heap[0][2] == "execute" \
                            and heap[0][3] not in batch:
                        batch.append(heapq.heappop(heap)[3])
                jobs = []
                for task in batch:
                    scheduled.discard(task)
                    jobs.append((task, pending[task].popleft()))
                if pool is not None and len(jobs) > 1:
                    futures = [pool.submit(self.agents[task].execute, snap, self.clock.now, force=True)
                               for task, snap in jobs]
                    results = [f.result() for f in futures]
                else:
                    results = [self.agents[task].execute(snap, self.clock.now, force=True) for task, snap in jobs]
                for (task, snap), rec in zip(jobs, results):
                    finish(task, snap, rec)
                    schedule(task)
        finally:
            if pool is not None:
                pool.shutdown()
        report.links = self._link_stats(cfg)
        return report

    def ghost_run(self, sources=None, config: RunConfig | None = None) -> RunReport:
        """Reactive run with payload-free values; no user code runs, nothing is stored.

        The routing table is ``report.routing``.
        """
        cfg = config or self.config
        return self.run_reactive(sources, replace(cfg, ghost=True))

    def _link_stats(self, cfg: RunConfig) -> dict[str, dict]:
        out = {}
        for name, link in self.links.items():
            if not link.slot_names:
                continue
            out[name] = {
                "arrivals": link.arrivals,
                "mean_interarrival": link.mean_interarrival,
                "pending": link.pending(),
                "notify": link.should_notify(cfg.service_time, cfg.notify_threshold),
            }
        return out

    # pull mode

    def run_pull(self, target: str, sources: Mapping[str, bytes | Sequence[bytes]] | None = None,
                 config: RunConfig | None = None) -> RunReport:
        """Rebuild ``target`` (a task or wire) from its dependencies backwards.

        Each needed task runs once on the latest values of its inputs, in
        topological order of the strongly connected components; a task whose
        cache key matches a resident prior result is replayed instead of run.
        Cycles iterate up to ``max_cycle_iterations`` passes or a fixpoint and
        must be seeded by earlier values on their internal wires.
        """
        cfg = config or self.config
        run = self._new_run()
        report = RunReport(run, "pull")
        for wire, payloads in (sources or {}).items():
            self._check_feed(wire)
            if isinstance(payloads, (bytes, bytearray, str)):
                payloads = [payloads]
            for p in payloads:
                self._ingest(run, wire, p.encode() if isinstance(p, str) else bytes(p), ghost=False)

        if target in self.spec.task_names:
            task, wires = target, list(self.spec.task(target).outputs)
        else:
            producers = self.spec.producers(target)
            if producers:
                task, wires = producers[0], [target]
            elif self.spec.consumers(target):
                av = self.value(target)
                if av is None:
                    raise RunError(f"no current value for source wire {target!r}")
                report.target = [av]
                report.nodes[target] = "source"
                return report
            else:
                raise RunError(f"unknown target {target!r}")

        needed = nx.ancestors(self._graph, task) | {task}
        sub = self._graph.subgraph(needed)
        cond = nx.condensation(sub)
        order = {n: i for i, n in enumerate(self.spec.task_names)}
        comps = list(nx.lexicographical_topological_sort(
            cond, key=lambda c: min(order[m] for m in cond.nodes[c]["members"])))
        for c in comps:
            members = sorted(cond.nodes[c]["members"], key=order.get)
            if len(members) == 1 and members[0] not in self.cyclic:
                self._pull_task(members[0], run, report)
                continue
            # one dry pass in member order: each input must already exist or be
            # produced earlier in the pass
            have = {w: len(v) for w, v in self.history.items()}
            for m in members:
                decl = self.spec.task(m)
                for slot in decl.stream_inputs:
                    if have.get(slot.wire, 0) < slot.required:
                        raise RunError(f"cycle through {', '.join(members)} has no value on "
                                       f"{slot.wire!r} to start from")
                for w in decl.outputs:
                    have[w] = have.get(w, 0) + 1
            previous = None
            for _ in range(cfg.max_cycle_iterations):
                uris = []
                for m in members:
                    rec = self._pull_task(m, run, report)
                    uris.append(tuple(av.payload_ref for av in rec.output_values))
                if uris == previous:
                    break
                previous = uris
        report.target = [self.value(w) for w in wires if self.value(w) is not None]
        report.terminal = list(report.target)
        return report

    def _pull_task(self, task: str, run: str, report: RunReport) -> ExecutionRecord:
        decl = self.spec.task(task)
        chosen = {}
        for slot in decl.stream_inputs:
            vals = self.history.get(slot.wire, [])
            if len(vals) < slot.required:
                raise RunError(f"task {task!r} needs {slot.required} value(s) on {slot.wire!r}, "
                               f"has {len(vals)}")
            chosen[slot.wire] = vals[-slot.required:]
        snap = Snapshot.of(chosen, self.clock.now)
        self._record("assemble", run, task=task, snapshot=snap.key,
                     inputs=tuple(av.id for av in snap.values),
                     code_version=self.runtimes[task].code_version, detail="pull")
        report.snapshots[task] = report.snapshots.get(task, 0) + 1
        rec = self.agents[task].execute(snap, self.clock.now, force=True)
        report.executions.append(rec)
        if not rec.ok:
            report.nodes[task] = "failed"
            raise RunError(f"task {task!r} failed: {rec.error}")
        report.nodes[task] = "cache-hit" if rec.cached else "computed"
        self.stale.discard(task)
        origin = frozenset().union(*(self.origins.get(av.id, frozenset()) for av in snap.values))
        for av in rec.output_values:
            self.history.setdefault(av.wire, []).append(av)
            self.origins[av.id] = origin
        return rec

    # out-of-band triggers

    def apply_trigger(self, trigger: UpdateTrigger) -> InvalidationReport:
        """Apply a sample, software or service update and report the stale cone."""
        spec = self.spec
        run = self._new_run()
        injected = None
        if trigger.kind == "software_update":
            if trigger.subject not in spec.task_names:
                raise KeyError(f"no task named {trigger.subject!r}")
            self.runtimes[trigger.subject].code_version = trigger.new_version
            stale = reachable(spec, [trigger.subject])
        elif trigger.kind == "service_update":
            if not (spec.consumers(trigger.subject, implicit=True) or spec.providers(trigger.subject)):
                raise KeyError(f"no implicit wire named {trigger.subject!r}")
            if trigger.payload is not None:
                self.services[trigger.subject] = FixtureService(trigger.payload)
            users = spec.consumers(trigger.subject, implicit=True)
            stale = reachable(spec, users) if users else []
        else:
            consumers = spec.consumers(trigger.subject)
            if not consumers:
                raise KeyError(f"no consumed wire named {trigger.subject!r}")
            stale = reachable(spec, consumers)
        self._record("trigger", run, task=trigger.subject if trigger.subject in spec.task_names else None,
                     wire=None if trigger.subject in spec.task_names else trigger.subject,
                     code_version=trigger.new_version,
                     detail=f"{trigger.kind} {trigger.subject}"
                            + (f" -> {trigger.new_version}" if trigger.new_version else ""))
        if trigger.kind == "sample_update":
            av = self._ingest(run, trigger.subject, trigger.payload or b"", ghost=False)
            for consumer in spec.consumers(trigger.subject):
                self.links[consumer].enqueue(av.wire, av, self.clock.now)
                self._record("enqueue", run, task=consumer, wire=av.wire, av=av.id)
            injected = av.id
        self.stale |= set(stale)
        return InvalidationReport(trigger, stale, injected)

    # store housekeeping

    def evict(self, now: float | None = None) -> list[str]:
        run = f"run-{self._run_count:04d}" if self.config.deterministic else "evict"
        gone = self.store.evict(now)
        for uri in gone:
            self._record("evict", run, payload=uri)
        return gone

    # resumable state

    def save_state(self, path: str | os.PathLike) -> None:
        state = {
            "links": {n: l.to_dict() for n, l in self.links.items()},
            "history": {w: [av.to_dict() for av in avs[-64:]] for w, avs in self.history.items()},
            "minter": self.minter.get_state(),
            "runtimes": {n: {"code_version": rt.code_version, "last_execution": rt.last_execution}
                         for n, rt in self.runtimes.items()},
            "stale": sorted(self.stale),
            "clock": self.clock.now,
            "runs": self._run_count,
        }
        Path(path).write_text(json.dumps(state, sort_keys=True))

    def load_state(self, path: str | os.PathLike) -> None:
        state = json.loads(Path(path).read_text())
        for n, d in state["links"].items():
            if n in self.links:
                self.links[n].load_dict(d)
        self.history = {w: [AnnotatedValue.from_dict(a) for a in avs] for w, avs in state["history"].items()}
        self.minter.set_state(state["minter"])
        for avs in self.history.values():
            for av in avs:
                self.minter.observe(av)
                self.origins.setdefault(av.id, frozenset([av.id]))
        for n, d in state["runtimes"].items():
            if n in self.runtimes:
                self.runtimes[n].code_version = d["code_version"]
                self.runtimes[n].last_execution = d["last_execution"]
        self.stale = set(state["stale"])
        self.clock.now = state["clock"]
        self._run_count = max(self._run_count, state["runs"])
