"""Annotated values and the content-addressed payload store."""
from __future__ import annotations

import hashlib
import json
import math
import os
import random
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

__all__ = [
    "AnnotatedValue",
    "Minter",
    "ContentEntry",
    "StorePolicy",
    "ContentStore",
    "NotFound",
    "GhostPayload",
    "StoreFull",
    "EVICTION_CLASSES",
]

# eviction preference at equal age: earlier in the tuple goes first
EVICTION_CLASSES = ("intermediate-simple", "intermediate-combined", "source")


class NotFound(LookupError):
    """Payload is not resident: evicted, never stored, or a ghost reference."""


class GhostPayload(NotFound):
    pass


class StoreFull(RuntimeError):
    pass


@dataclass(frozen=True)
class AnnotatedValue:
    id: str
    source_task: str
    wire: str
    payload_ref: str | None
    created_wall: float
    created_logical: int
    code_version: str
    ghost: bool = False

    def __post_init__(self):
        if self.ghost != (self.payload_ref is None):
            raise ValueError("ghost must be set exactly when payload_ref is absent")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotatedValue":
        return cls(**d)


class Minter:
    """Issues annotated values with fresh ids and per-(task, wire) counters.

    With a seed the 128-bit ids come from a seeded generator, so reruns of a
    deterministic schedule reproduce them.
    """

    def __init__(self, seed: int | None = None, clock: Callable[[], float] = time.time):
        self._rng = random.Random(seed) if seed is not None else None
        self.clock = clock
        self.counters: dict[tuple[str, str], int] = {}
        self.ids: set[str] = set()
        self._lock = threading.Lock()

    def _fresh_id(self) -> str:
        while True:
            new = f"{self._rng.getrandbits(128):032x}" if self._rng else uuid.uuid4().hex
            if new not in self.ids:
                self.ids.add(new)
                return new

    def mint(self, source_task: str, wire: str, payload_ref: str | None,
             code_version: str, ghost: bool = False) -> AnnotatedValue:
        if ghost and payload_ref is not None:
            raise ValueError("a ghost value cannot carry a payload reference")
        if not ghost and payload_ref is None:
            raise ValueError("a real value needs a payload reference")
        with self._lock:
            n = self.counters.get((source_task, wire), 0) + 1
            self.counters[(source_task, wire)] = n
            av_id = self._fresh_id()
        return AnnotatedValue(av_id, source_task, wire, payload_ref, self.clock(), n, code_version, ghost)

    def observe(self, av: AnnotatedValue) -> None:
        """Account for a value minted elsewhere (state reload)."""
        with self._lock:
            self.ids.add(av.id)
            key = (av.source_task, av.wire)
            self.counters[key] = max(self.counters.get(key, 0), av.created_logical)

    def get_state(self) -> dict:
        return {
            "counters": [[t, w, n] for (t, w), n in sorted(self.counters.items())],
            "rng": self._rng.getstate() if self._rng else None,
        }

    def set_state(self, state: dict) -> None:
        self.counters = {(t, w): n for t, w, n in state["counters"]}
        if state.get("rng") is not None and self._rng is not None:
            v, internal, gauss = state["rng"]
            self._rng.setstate((v, tuple(internal), gauss))


@dataclass
class ContentEntry:
    uri: str
    size: int
    stored_at: float
    eviction_class: str
    pinned: bool = False


@dataclass
class StorePolicy:
    max_bytes: int = 1 << 30
    ttl: dict = field(default_factory=lambda: {
        "source": math.inf,
        "intermediate-combined": 3600.0,
        "intermediate-simple": 600.0,
    })
    # internal-vs-network storage latency; reported, drives nothing
    rho: float = 1.0

    def __post_init__(self):
        for cls in EVICTION_CLASSES:
            self.ttl.setdefault(cls, math.inf)

    def to_dict(self) -> dict:
        return {
            "max_bytes": self.max_bytes,
            "ttl": {k: (None if math.isinf(v) else v) for k, v in sorted(self.ttl.items())},
            "rho": self.rho,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StorePolicy":
        ttl = cls().ttl
        ttl.update({k: (math.inf if v is None else float(v)) for k, v in d.get("ttl", {}).items()})
        return cls(max_bytes=d.get("max_bytes", 1 << 30), ttl=ttl, rho=d.get("rho", 1.0))


class ContentStore:
    """Payload blobs on disk under ``objects/ab/cdef...``, addressed ``cas:<hex>``.

    Entry metadata lives in an append-only journal (``index.jsonl``) so a store
    directory can be reopened by a later process.
    """

    def __init__(self, root: str | os.PathLike, policy: StorePolicy | None = None,
                 algorithm: str = "sha256", clock: Callable[[], float] = time.time):
        self.root = Path(root)
        self.objects = self.root / "objects"
        self.objects.mkdir(parents=True, exist_ok=True)
        self.clock = clock
        meta_path = self.root / "store.json"
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            self.algorithm = meta["hash"]
            self.policy = policy or StorePolicy.from_dict(meta["policy"])
        else:
            hashlib.new(algorithm)
            self.algorithm = algorithm
            self.policy = policy or StorePolicy()
        meta_path.write_text(json.dumps({"hash": self.algorithm, "policy": self.policy.to_dict()},
                                        indent=2) + "\n")
        self.entries: dict[str, ContentEntry] = {}
        self.put_count = 0
        self._lock = threading.RLock()
        self._journal = self.root / "index.jsonl"
        self._load_journal()

    def _load_journal(self) -> None:
        if not self._journal.exists():
            return
        for line in self._journal.read_text().splitlines():
            rec = json.loads(line)
            if rec.get("op") == "drop":
                self.entries.pop(rec["uri"], None)
            else:
                rec.pop("op", None)
                if self._path(rec["uri"]).exists():
                    self.entries[rec["uri"]] = ContentEntry(**rec)

    def _log(self, op: str, entry: ContentEntry) -> None:
        rec = {"op": op, **asdict(entry)} if op == "put" else {"op": op, "uri": entry.uri}
        with open(self._journal, "a") as fh:
            fh.write(json.dumps(rec) + "\n")

    def digest(self, payload: bytes) -> str:
        return "cas:" + hashlib.new(self.algorithm, payload).hexdigest()

    def _path(self, uri: str) -> Path:
        if not uri.startswith("cas:"):
            raise NotFound(f"not a content uri: {uri!r}")
        hexd = uri[4:]
        return self.objects / hexd[:2] / hexd[2:]

    @property
    def used_bytes(self) -> int:
        return sum(e.size for e in self.entries.values())

    def put(self, payload: bytes, eviction_class: str = "intermediate-simple",
            now: float | None = None) -> str:
        if eviction_class not in EVICTION_CLASSES:
            raise ValueError(f"unknown eviction class {eviction_class!r}")
        now = self.clock() if now is None else now
        uri = self.digest(payload)
        with self._lock:
            self.put_count += 1
            entry = self.entries.get(uri)
            if entry is not None:
                entry.stored_at = max(entry.stored_at, now)
                if EVICTION_CLASSES.index(eviction_class) > EVICTION_CLASSES.index(entry.eviction_class):
                    entry.eviction_class = eviction_class
                self._log("put", entry)
                return uri
            if self.used_bytes + len(payload) > self.policy.max_bytes:
                self.evict(now)
                if self.used_bytes + len(payload) > self.policy.max_bytes:
                    raise StoreFull(f"{len(payload)} bytes do not fit in {self.policy.max_bytes}")
            path = self._path(uri)
            path.parent.mkdir(exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(payload)
            os.replace(tmp, path)
            entry = ContentEntry(uri, len(payload), now, eviction_class)
            self.entries[uri] = entry
            self._log("put", entry)
            return uri

    def get(self, uri: str | None) -> bytes:
        if uri is None:
            raise GhostPayload("ghost value has no payload")
        with self._lock:
            if uri not in self.entries:
                raise NotFound(uri)
            try:
                return self._path(uri).read_bytes()
            except FileNotFoundError:
                raise NotFound(uri) from None

    def __contains__(self, uri: str | None) -> bool:
        return uri is not None and uri in self.entries

    def pin(self, uri: str, pinned: bool = True) -> None:
        with self._lock:
            if uri not in self.entries:
                raise NotFound(uri)
            self.entries[uri].pinned = pinned
            self._log("put", self.entries[uri])

    def expired(self, entry: ContentEntry, now: float) -> bool:
        return not entry.pinned and now - entry.stored_at >= self.policy.ttl[entry.eviction_class]

    def evict(self, now: float | None = None) -> list[str]:
        """Drop every unpinned entry whose class TTL has elapsed.

        Returned oldest first; at equal age the shorter-lived class goes first.
        Pinned and in-TTL entries are never touched, even over capacity.
        """
        now = self.clock() if now is None else now
        with self._lock:
            victims = [e for e in self.entries.values() if self.expired(e, now)]
            victims.sort(key=lambda e: (e.stored_at, EVICTION_CLASSES.index(e.eviction_class), e.uri))
            for e in victims:
                del self.entries[e.uri]
                self._path(e.uri).unlink(missing_ok=True)
                self._log("drop", e)
            return [e.uri for e in victims]
