"""Smart links: input queues for one task and the snapshot policies over them.

A :class:`LinkState` owns one FIFO queue per stream slot of a task.
:meth:`LinkState.try_assemble` turns queued values into :class:`Snapshot`
execution sets according to a :class:`SnapshotPolicy`:

``all_new``
    every slot must offer fresh values; nothing is reused.
``swap_new_for_old``
    any fresh value triggers; slots without one repeat their last values.
``merge``
    all queues drain into one first-come-first-served stream, one value per
    snapshot.

A ``[N/S]`` window slot contributes its latest N values, first after N
arrivals and then once per S further arrivals.
"""
from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .store import AnnotatedValue
from .wiring import InputSlot

__all__ = ["SnapshotPolicy", "Snapshot", "LinkState", "QueueOverflow", "POLICIES"]

POLICIES = ("all_new", "swap_new_for_old", "merge")


class QueueOverflow(RuntimeError):
    pass


@dataclass(frozen=True)
class SnapshotPolicy:
    mode: str = "all_new"
    wait_rule: str = "exact"
    # per-slot override of the required count; defaults to the slot's buffer_min
    counts: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.mode not in POLICIES:
            raise ValueError(f"unknown snapshot policy {self.mode!r}")
        if self.wait_rule not in ("exact", "min"):
            raise ValueError(f"unknown wait rule {self.wait_rule!r}")


def snapshot_key(slots: Iterable[tuple[str, Sequence[AnnotatedValue]]]) -> str:
    text = ";".join(f"{name}:" + ",".join(av.id for av in avs) for name, avs in slots)
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class Snapshot:
    slots: tuple[tuple[str, tuple[AnnotatedValue, ...]], ...]
    assembled_at: float = 0.0
    key: str = ""

    def __post_init__(self):
        if not self.key:
            object.__setattr__(self, "key", snapshot_key(self.slots))

    @classmethod
    def of(cls, mapping: dict[str, Sequence[AnnotatedValue]], at: float = 0.0) -> "Snapshot":
        return cls(tuple((k, tuple(v)) for k, v in mapping.items()), at)

    @property
    def values(self) -> list[AnnotatedValue]:
        return [av for _, avs in self.slots for av in avs]

    @property
    def ids(self) -> tuple[tuple[str, tuple[str, ...]], ...]:
        return tuple((name, tuple(av.id for av in avs)) for name, avs in self.slots)

    @property
    def ghost(self) -> bool:
        return any(av.ghost for av in self.values)

    def __getitem__(self, slot: str) -> tuple[AnnotatedValue, ...]:
        for name, avs in self.slots:
            if name == slot:
                return avs
        raise KeyError(slot)


class _Slot:
    def __init__(self, spec: InputSlot):
        self.spec = spec
        self.queue: deque[tuple[float, AnnotatedValue]] = deque()
        self.window: deque[AnnotatedValue] | None = (
            deque(maxlen=spec.window_size) if spec.windowed else None
        )
        self.last: tuple[AnnotatedValue, ...] | None = None

    def ready(self, need: int, wait_rule: str) -> bool:
        if self.window is not None:
            if len(self.window) < self.spec.window_size:
                return len(self.queue) >= self.spec.window_size - len(self.window)
            return len(self.queue) >= self.spec.slide
        return len(self.queue) >= need

    def take(self, need: int, wait_rule: str) -> tuple[AnnotatedValue, ...]:
        if self.window is not None:
            if len(self.window) < self.spec.window_size:
                n = self.spec.window_size - len(self.window)
            else:
                n = self.spec.slide
            for _ in range(n):
                self.window.append(self.queue.popleft()[1])
            self.last = tuple(self.window)
        else:
            n = len(self.queue) if wait_rule == "min" else need
            self.last = tuple(self.queue.popleft()[1] for _ in range(n))
        return self.last


class LinkState:
    """Queues and assembly state for the stream inputs of one task."""

    def __init__(self, slots: Sequence[InputSlot], capacity: int | None = None):
        slots = [s for s in slots if not s.implicit]
        if len({s.wire for s in slots}) != len(slots):
            raise ValueError("duplicate slot names")
        self._slots = {s.wire: _Slot(s) for s in slots}
        self.capacity = capacity
        self.arrivals = 0
        self.first_arrival: float | None = None
        self.last_arrival: float | None = None

    @property
    def slot_names(self) -> list[str]:
        return list(self._slots)

    def queue(self, slot: str) -> list[AnnotatedValue]:
        return [av for _, av in self._slots[slot].queue]

    def window(self, slot: str) -> list[AnnotatedValue]:
        w = self._slots[slot].window
        return list(w) if w is not None else []

    def pending(self) -> int:
        return sum(len(s.queue) for s in self._slots.values())

    def enqueue(self, slot: str, av: AnnotatedValue, now: float | None = None) -> "LinkState":
        if slot not in self._slots:
            raise KeyError(f"no stream slot {slot!r}")
        if av.wire != slot:
            raise ValueError(f"value on wire {av.wire!r} offered to slot {slot!r}")
        st = self._slots[slot]
        if self.capacity is not None and len(st.queue) >= self.capacity:
            raise QueueOverflow(f"slot {slot!r} holds {self.capacity} values already")
        now = av.created_wall if now is None else now
        st.queue.append((now, av))
        self.arrivals += 1
        if self.first_arrival is None:
            self.first_arrival = now
        self.last_arrival = now
        return self

    @property
    def mean_interarrival(self) -> float | None:
        if self.arrivals < 2:
            return None
        return (self.last_arrival - self.first_arrival) / (self.arrivals - 1)

    def should_notify(self, service_time: float, threshold: float, default: bool = False) -> bool:
        """Push notifications when arrivals are sparse relative to service time.

        True when mean inter-arrival / service time exceeds ``threshold``; false
        means consumers should poll the queue instead.
        """
        gap = self.mean_interarrival
        if gap is None:
            return default
        if service_time <= 0:
            return True
        return gap / service_time > threshold

    def _need(self, name: str, policy: SnapshotPolicy) -> int:
        return policy.counts.get(name, self._slots[name].spec.buffer_min)

    def try_assemble(self, policy: SnapshotPolicy, now: float = 0.0) -> Snapshot | None:
        if not self._slots:
            return None
        if policy.mode == "merge":
            return self._merge(now)
        ready = {n: s.ready(self._need(n, policy), policy.wait_rule) for n, s in self._slots.items()}
        if policy.mode == "all_new":
            if not all(ready.values()):
                return None
        elif policy.mode == "swap_new_for_old":
            if not any(ready.values()):
                return None
            if any(not ready[n] and s.last is None for n, s in self._slots.items()):
                return None
        taken = {}
        for n, s in self._slots.items():
            taken[n] = s.take(self._need(n, policy), policy.wait_rule) if ready[n] else s.last
        return Snapshot.of(taken, now)

    def _merge(self, now: float) -> Snapshot | None:
        best = None
        for i, (name, s) in enumerate(self._slots.items()):
            if s.queue:
                t, av = s.queue[0]
                k = (t, av.created_logical, av.source_task, i)
                if best is None or k < best[0]:
                    best = (k, name)
        if best is None:
            return None
        s = self._slots[best[1]]
        av = s.queue.popleft()[1]
        s.last = (av,)
        return Snapshot(((best[1], (av,)),), now)

    def drain(self, policy: SnapshotPolicy, now: float = 0.0) -> list[Snapshot]:
        out = []
        while (snap := self.try_assemble(policy, now)) is not None:
            out.append(snap)
        return out

    # checkpointing: references only, never payloads

    def to_dict(self) -> dict:
        return {
            "arrivals": self.arrivals,
            "first_arrival": self.first_arrival,
            "last_arrival": self.last_arrival,
            "slots": {
                n: {
                    "queue": [[t, av.to_dict()] for t, av in s.queue],
                    "window": [av.to_dict() for av in s.window] if s.window is not None else None,
                    "last": [av.to_dict() for av in s.last] if s.last is not None else None,
                }
                for n, s in self._slots.items()
            },
        }

    def load_dict(self, d: dict) -> None:
        self.arrivals = d["arrivals"]
        self.first_arrival = d["first_arrival"]
        self.last_arrival = d["last_arrival"]
        for n, sd in d["slots"].items():
            s = self._slots[n]
            s.queue = deque((t, AnnotatedValue.from_dict(a)) for t, a in sd["queue"])
            if sd["window"] is not None and s.window is not None:
                s.window.clear()
                s.window.extend(AnnotatedValue.from_dict(a) for a in sd["window"])
            s.last = tuple(AnnotatedValue.from_dict(a) for a in sd["last"]) if sd["last"] is not None else None

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)
