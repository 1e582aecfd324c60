"""Smart tasks: run user code on snapshots, cache results by content.

User code is any executable honouring the plugin contract::

    prog <in-file>... <out-file>...

Input files are written in slot declaration order, then buffer order, and
named ``<slot>.<ordinal>.<value-id>``.  One output path follows per declared
output wire.  Exit status 0 means success; stderr lines are kept in the
checkpoint log.  The snapshot key is exported as ``SMARTPIPE_SNAPSHOT_KEY``.
"""
from __future__ import annotations

import hashlib
import json
import os
import shutil
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .links import Snapshot
from .provenance import Registry
from .store import AnnotatedValue, ContentStore, Minter, NotFound
from .wiring import InputSlot, TaskDecl

__all__ = [
    "TaskRuntime",
    "ExecutionRecord",
    "ResultCache",
    "TaskAgent",
    "FixtureService",
    "CommandService",
    "ServiceError",
    "MaterializationError",
    "cache_key",
    "materialize",
]


class ServiceError(RuntimeError):
    """An implicit service is missing or failed."""


class MaterializationError(RuntimeError):
    """An input payload is no longer resident in the store."""


@dataclass
class TaskRuntime:
    decl: TaskDecl
    code_version: str = ""
    exec: tuple[str, ...] = ()
    min_execution_interval: float = 0.0
    last_execution: float | None = None
    # stream slot whose payloads form the request sent to implicit services
    request_slot: str | None = None
    env: dict = field(default_factory=dict)

    def __post_init__(self):
        self.code_version = self.code_version or self.decl.code_version
        self.exec = tuple(self.exec or self.decl.argv)
        if self.min_execution_interval < 0:
            raise ValueError("min_execution_interval must be >= 0")

    @property
    def name(self) -> str:
        return self.decl.name

    def due(self, now: float) -> float:
        """Earliest time the next execution may start."""
        if self.last_execution is None:
            return now
        return max(now, self.last_execution + self.min_execution_interval)


@dataclass
class ExecutionRecord:
    task: str
    snapshot_key: str
    inputs: dict[str, list[str]]
    implicit: dict[str, str]
    outputs: dict[str, str]
    exit_status: int | None
    started: float
    finished: float
    code_version: str
    cached: bool = False
    ghost: bool = False
    cache_key: str | None = None
    replay_of: str | None = None
    error: str | None = None
    invoked: bool = False
    output_values: list[AnnotatedValue] = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.error is None and (self.cached or self.ghost or self.exit_status == 0)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "snapshot_key": self.snapshot_key,
            "inputs": self.inputs,
            "implicit": self.implicit,
            "outputs": self.outputs,
            "exit_status": self.exit_status,
            "started": self.started,
            "finished": self.finished,
            "code_version": self.code_version,
            "cached": self.cached,
            "ghost": self.ghost,
            "cache_key": self.cache_key,
            "replay_of": self.replay_of,
            "error": self.error,
            "invoked": self.invoked,
        }


def cache_key(task: str, code_version: str, snapshot: Snapshot,
              implicit: Mapping[str, str] | Sequence[tuple[str, str]] = ()) -> str | None:
    """Digest of task, version, input payload URIs per slot and lookup digests.

    None for ghost snapshots, which are never cached.
    """
    if snapshot.ghost:
        return None
    items = implicit.items() if isinstance(implicit, Mapping) else implicit
    body = [
        task,
        code_version,
        [[name, [av.payload_ref for av in avs]] for name, avs in snapshot.slots],
        [[w, d] for w, d in items],
    ]
    return hashlib.sha256(json.dumps(body, separators=(",", ":")).encode()).hexdigest()


class ResultCache:
    """Successful executions by cache key, optionally journalled to a file."""

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            for line in self.path.read_text().splitlines():
                rec = json.loads(line)
                self._entries[rec["key"]] = rec

    def __len__(self) -> int:
        return len(self._entries)

    def store(self, key: str, snapshot_key: str, code_version: str, outputs: dict[str, str]) -> None:
        rec = {"key": key, "snapshot": snapshot_key, "code_version": code_version, "outputs": outputs}
        with self._lock:
            self._entries[key] = rec
            if self.path is not None:
                with open(self.path, "a") as fh:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def lookup(self, key: str | None, store: ContentStore) -> dict | None:
        """The prior record for ``key`` if all its outputs are still resident."""
        if key is None:
            return None
        rec = self._entries.get(key)
        if rec is None or not all(uri in store for uri in rec["outputs"].values()):
            return None
        return rec


class FixtureService:
    """Implicit service answering every request with a constant response."""

    def __init__(self, response: bytes | str):
        self.response = response.encode() if isinstance(response, str) else response

    def __call__(self, request: bytes) -> bytes:
        return self.response


class CommandService:
    """Implicit service backed by a program: request on stdin, response on stdout."""

    def __init__(self, argv: Sequence[str], timeout: float | None = 60.0):
        self.argv = list(argv)
        self.timeout = timeout

    def __call__(self, request: bytes) -> bytes:
        try:
            proc = subprocess.run(self.argv, input=request, capture_output=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ServiceError(f"{self.argv[0]}: {exc}") from exc
        if proc.returncode != 0:
            raise ServiceError(f"{self.argv[0]} exited {proc.returncode}: {proc.stderr.decode(errors='replace')}")
        return proc.stdout


def materialize(snapshot: Snapshot, workdir: str | os.PathLike,
                store: ContentStore) -> list[Path]:
    """Write each value of ``snapshot`` to ``workdir`` as a labelled file.

    Ghost snapshots produce no files.
    """
    if snapshot.ghost:
        return []
    workdir = Path(workdir)
    paths = []
    for slot, avs in snapshot.slots:
        for i, av in enumerate(avs):
            try:
                data = store.get(av.payload_ref)
            except NotFound as exc:
                raise MaterializationError(f"{slot}[{i}] {av.id}: {exc}") from exc
            p = workdir / f"{slot}.{i}.{av.id}"
            p.write_bytes(data)
            paths.append(p)
    return paths


class TaskAgent:
    """Executes one task's snapshots; one execution at a time."""

    def __init__(self, runtime: TaskRuntime, store: ContentStore, minter: Minter,
                 registry: Registry, cache: ResultCache | None = None,
                 services: Mapping[str, Callable[[bytes], bytes]] | None = None,
                 output_classes: Mapping[str, str] | None = None,
                 run_id: str = "run", timeout: float | None = None):
        self.runtime = runtime
        self.store = store
        self.minter = minter
        self.registry = registry
        self.cache = cache if cache is not None else ResultCache()
        self.services = services if services is not None else {}
        self.output_classes = dict(output_classes or {})
        self.run_id = run_id
        self.timeout = timeout
        self.invocations = 0
        self._lock = threading.Lock()

    @property
    def decl(self) -> TaskDecl:
        return self.runtime.decl

    def _log(self, kind: str, now: float, **kw):
        kw.setdefault("task", self.decl.name)
        kw.setdefault("code_version", self.runtime.code_version)
        return self.registry.record(kind, self.run_id, logical=now, **kw)

    def resolve_implicit(self, slot: InputSlot, request: bytes, now: float = 0.0) -> tuple[bytes, str]:
        if not slot.implicit:
            raise ValueError(f"slot {slot.wire!r} is not implicit")
        adapter = self.services.get(slot.wire)
        if adapter is None:
            raise ServiceError(f"no service registered for {slot.wire!r}")
        try:
            response = adapter(request)
        except ServiceError:
            raise
        except Exception as exc:
            raise ServiceError(f"service {slot.wire!r} failed: {exc}") from exc
        uri = self.store.put(response, "source", now=now)
        self._log("implicit_lookup", now, wire=slot.wire, payload=uri,
                  detail=f"request {self.store.digest(request)}")
        return response, uri

    def _request(self, snapshot: Snapshot) -> bytes:
        slot = self.runtime.request_slot
        if slot is None:
            return b""
        try:
            avs = snapshot[slot]
        except KeyError:
            return b""
        return b"".join(self.store.get(av.payload_ref) for av in avs)

    def _mint_outputs(self, cause, uris: dict[str, str | None], now: float, ghost: bool) -> list[AnnotatedValue]:
        out = []
        for wire in self.decl.outputs:
            av = self.minter.mint(self.decl.name, wire, uris.get(wire), self.runtime.code_version, ghost=ghost)
            self._log("mint", now, wire=wire, av=av.id, payload=av.payload_ref, cause=cause.seq)
            out.append(av)
        return out

    def execute(self, snapshot: Snapshot, now: float = 0.0, *, force: bool = False,
                use_cache: bool = True) -> ExecutionRecord | None:
        """Run one snapshot.  Returns None when rate control defers it."""
        rt = self.runtime
        if not force and rt.due(now) > now:
            return None
        with self._lock:
            rt.last_execution = now
            return self._execute(snapshot, now, use_cache)

    def _execute(self, snapshot: Snapshot, now: float, use_cache: bool) -> ExecutionRecord:
        rt, decl = self.runtime, self.decl
        inputs = {name: [av.id for av in avs] for name, avs in snapshot.slots}
        flat = tuple(av.id for av in snapshot.values)
        rec = ExecutionRecord(decl.name, snapshot.key, inputs, {}, {}, None, now, now, rt.code_version)

        if snapshot.ghost:
            rec.ghost = True
            self._log("exec_start", now, snapshot=snapshot.key, inputs=flat, detail="ghost")
            end = self._log("exec_end", now, snapshot=snapshot.key, inputs=flat, ref="ghost")
            rec.output_values = self._mint_outputs(end, {}, now, ghost=True)
            rec.outputs = {av.wire: av.id for av in rec.output_values}
            return rec

        responses: dict[str, bytes] = {}
        try:
            request = self._request(snapshot)
            for slot in decl.implicit_inputs:
                responses[slot.wire], rec.implicit[slot.wire] = self.resolve_implicit(slot, request, now)
        except (ServiceError, NotFound) as exc:
            rec.error = f"service dependency: {exc}"
            self._log("exec_end", now, snapshot=snapshot.key, inputs=flat, detail=rec.error)
            return rec
        digests = tuple(rec.implicit.items())
        key = cache_key(decl.name, rt.code_version, snapshot, digests)
        rec.cache_key = key

        hit = self.cache.lookup(key, self.store) if use_cache else None
        if hit is not None:
            rec.cached = True
            rec.replay_of = hit["snapshot"]
            ev = self._log("cache_hit", now, snapshot=snapshot.key, inputs=flat, digests=digests,
                           ref=hit["snapshot"], cached=True)
            rec.output_values = self._mint_outputs(ev, hit["outputs"], now, ghost=False)
            rec.outputs = {av.wire: av.id for av in rec.output_values}
            return rec

        work = Path(tempfile.mkdtemp(prefix=f"smartpipe-{decl.name}-"))
        try:
            return self._run_process(rec, snapshot, responses, digests, flat, work, now)
        finally:
            shutil.rmtree(work, ignore_errors=True)

    def _run_process(self, rec, snapshot, responses, digests, flat, work: Path, now: float):
        rt, decl = self.runtime, self.decl
        try:
            files = materialize(snapshot, work, self.store)
        except MaterializationError as exc:
            rec.error = f"materialize: {exc}"
            self._log("exec_end", now, snapshot=snapshot.key, inputs=flat, digests=digests, detail=rec.error)
            return rec
        by_slot: dict[str, list[str]] = {}
        for p in files:
            by_slot.setdefault(p.name.split(".", 1)[0], []).append(str(p))
        argv_in: list[str] = []
        for slot in decl.inputs:
            if slot.implicit:
                p = work / f"{slot.wire}.0.{rec.implicit[slot.wire][4:20]}"
                p.write_bytes(responses[slot.wire])
                argv_in.append(str(p))
            else:
                argv_in.extend(by_slot.get(slot.wire, []))
        outdir = work / "out"
        outdir.mkdir()
        out_paths = [outdir / w for w in decl.outputs]
        argv = [*rt.exec, *argv_in, *map(str, out_paths)]
        env = {**os.environ, **rt.env,
               "SMARTPIPE_SNAPSHOT_KEY": snapshot.key,
               "SMARTPIPE_TASK": decl.name,
               "SMARTPIPE_CODE_VERSION": rt.code_version}
        self._log("exec_start", now, snapshot=snapshot.key, inputs=flat, digests=digests,
                  detail=Path(rt.exec[0]).name)
        self.invocations += 1
        rec.invoked = True
        try:
            proc = subprocess.run(argv, capture_output=True, env=env, cwd=work, timeout=self.timeout)
            status, stderr = proc.returncode, proc.stderr.decode(errors="replace")
        except (OSError, subprocess.TimeoutExpired) as exc:
            status, stderr = None, str(exc)
        rec.exit_status = status
        if status != 0:
            rec.error = f"exit status {status}"
            self._log("exec_end", now, snapshot=snapshot.key, inputs=flat, digests=digests,
                      status=status, detail=stderr)
            return rec
        uris = {}
        for wire, p in zip(decl.outputs, out_paths):
            if not p.exists():
                rec.error = f"missing output for wire {wire!r}"
                self._log("exec_end", now, snapshot=snapshot.key, inputs=flat, digests=digests,
                          status=status, detail=stderr + f"[missing output: {wire}]")
                return rec
            uris[wire] = self.store.put(p.read_bytes(), self.output_classes.get(wire, "intermediate-simple"),
                                        now=now)
        end = self._log("exec_end", now, snapshot=snapshot.key, inputs=flat, digests=digests,
                        status=status, detail=stderr)
        if rec.cache_key is not None:
            self.cache.store(rec.cache_key, snapshot.key, rt.code_version, uris)
        rec.output_values = self._mint_outputs(end, uris, now, ghost=False)
        rec.outputs = {av.wire: av.id for av in rec.output_values}
        return rec
