"""Trace probes: collector, structuring and statistical agents.

The collector appends engine events to an append-only :class:`TraceStore`
under a global sequence number. The structuring agent groups the events of
each object into per-actor sessions and annotates them. The statistical
agent derives the per-object usage criteria consumed by the weight function.
"""
from __future__ import annotations

import io
import json
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Sequence, Union

from collabmon.engine import EngineEvent, EventKind

DEFAULT_SESSION_GAP = 10

MODIFICATIONS = "modifications"
MULTI_ACTOR_ACCESSES = "multi_actor_accesses"
OUTPUT_FLOWS = "output_flows"

# fixed field order of one exported trace line
TRACE_FIELDS = (
    "seq", "kind", "process_id", "revision", "instance_id", "activity_id",
    "actor_id", "object_id", "at", "version", "detail", "annotations",
)

TRACE_EVENT_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "TraceEvent",
    "type": "object",
    "additionalProperties": False,
    "required": list(TRACE_FIELDS),
    "properties": {
        "seq": {"type": "integer", "minimum": 0},
        "kind": {"enum": [k.value for k in EventKind]},
        "process_id": {"type": ["string", "null"]},
        "revision": {"type": ["integer", "null"], "minimum": 0},
        "instance_id": {"type": ["string", "null"]},
        "activity_id": {"type": ["string", "null"]},
        "actor_id": {"type": ["string", "null"]},
        "object_id": {"type": ["string", "null"]},
        "at": {"type": "integer"},
        "version": {"type": ["integer", "null"], "minimum": 0},
        "detail": {"type": ["string", "null"]},
        "annotations": {"type": "object", "additionalProperties": {"type": "string"}},
    },
}


class TraceFormatError(ValueError):
    pass


@dataclass
class TraceEvent:
    seq: int
    event: EngineEvent
    annotations: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        row = {"seq": self.seq, **self.event.to_dict(), "annotations": dict(sorted(self.annotations.items()))}
        return {k: row[k] for k in TRACE_FIELDS}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TraceEvent":
        return cls(int(data["seq"]), EngineEvent.from_dict(data), dict(data.get("annotations") or {}))


class TraceStore:
    """Append-only event log; sequence numbers are assigned under a lock."""

    def __init__(self, events: Iterable[TraceEvent] = ()):
        self._events: list[TraceEvent] = []
        self._lock = threading.Lock()
        for ev in events:
            if self._events and ev.seq <= self._events[-1].seq:
                raise TraceFormatError(f"seq {ev.seq} does not increase")
            self._events.append(ev)

    def collect(self, event: EngineEvent) -> int:
        with self._lock:
            seq = self._events[-1].seq + 1 if self._events else 0
            self._events.append(TraceEvent(seq, event))
            return seq

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.snapshot())

    def __getitem__(self, index: int) -> TraceEvent:
        return self._events[index]

    def snapshot(self, end: Optional[int] = None) -> list[TraceEvent]:
        """Consistent prefix of the store (the first ``end`` events)."""
        with self._lock:
            return list(self._events[:end])

    def annotate(self, seq_index: int, key: str, value: str) -> None:
        self._events[seq_index].annotations[key] = value

    def write_jsonl(self, target: Union[str, Path, io.TextIOBase]) -> None:
        lines = "".join(json.dumps(ev.to_dict(), separators=(",", ":")) + "\n" for ev in self.snapshot())
        if isinstance(target, (str, Path)):
            Path(target).write_text(lines, encoding="utf-8")
        else:
            target.write(lines)

    def dumps(self) -> str:
        buf = io.StringIO()
        self.write_jsonl(buf)
        return buf.getvalue()

    @classmethod
    def read_jsonl(cls, source: Union[str, Path]) -> "TraceStore":
        return cls.loads(Path(source).read_text(encoding="utf-8"))

    @classmethod
    def loads(cls, text: str) -> "TraceStore":
        events = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                events.append(TraceEvent.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise TraceFormatError(f"line {lineno}: {exc}") from exc
        return cls(events)


def collect(store: TraceStore, event: EngineEvent) -> int:
    return store.collect(event)


# --- structuring agent ------------------------------------------------------


@dataclass(frozen=True)
class Session:
    actor_id: str
    first_at: int
    last_at: int
    first_seq: int
    last_seq: int
    seqs: tuple[int, ...]


@dataclass
class ObjectUsageRecord:
    object_id: str
    sessions: list[Session]
    labels: list[str]

    @property
    def actors(self) -> list[str]:
        return sorted({s.actor_id for s in self.sessions})


def structure(store: TraceStore, session_gap: int = DEFAULT_SESSION_GAP) -> list[ObjectUsageRecord]:
    """Group object events into per-actor sessions and annotate the store.

    An actor's events on one object (ordered by time, then seq) open a new
    session whenever the time gap to the previous one exceeds
    ``session_gap``. Objects touched by two or more actors are labelled
    ``multi-actor``; ``contested`` marks objects modified by two or more
    actors.
    """
    events = store.snapshot()
    index_of = {ev.seq: i for i, ev in enumerate(events)}
    per_object: dict[str, dict[str, list[TraceEvent]]] = defaultdict(lambda: defaultdict(list))
    modifiers: dict[str, set[str]] = defaultdict(set)
    for ev in events:
        e = ev.event
        if e.object_id is None or e.actor_id is None:
            continue
        per_object[e.object_id][e.actor_id].append(ev)
        if e.kind is EventKind.OBJECT_MODIFIED:
            modifiers[e.object_id].add(e.actor_id)

    records = []
    for object_id in sorted(per_object):
        sessions: list[Session] = []
        for actor_id in sorted(per_object[object_id]):
            rows = sorted(per_object[object_id][actor_id], key=lambda t: (t.event.at, t.seq))
            chunk = [rows[0]]
            for prev, cur in zip(rows, rows[1:]):
                if cur.event.at - prev.event.at > session_gap:
                    sessions.append(_session(actor_id, chunk))
                    chunk = []
                chunk.append(cur)
            sessions.append(_session(actor_id, chunk))
        labels = []
        if len(per_object[object_id]) >= 2:
            labels.append("multi-actor")
        if len(modifiers[object_id]) >= 2:
            labels.append("contested")
        records.append(ObjectUsageRecord(object_id, sessions, labels))

        label_text = ",".join(labels)
        for n, sess in enumerate(sessions):
            for seq in sess.seqs:
                i = index_of[seq]
                store.annotate(i, "session", f"{sess.actor_id}#{n}")
                if label_text:
                    store.annotate(i, "labels", label_text)
    return records


def _session(actor_id: str, chunk: Sequence[TraceEvent]) -> Session:
    seqs = tuple(sorted(t.seq for t in chunk))
    return Session(
        actor_id=actor_id,
        first_at=chunk[0].event.at,
        last_at=chunk[-1].event.at,
        first_seq=seqs[0],
        last_seq=seqs[-1],
        seqs=seqs,
    )


# --- statistical agent ------------------------------------------------------


@dataclass
class ObjectUsageStats:
    object_id: str
    modification_count: int = 0
    multi_actor_access_count: int = 0
    output_flow_count: int = 0
    extra: dict[str, float] = field(default_factory=dict)

    @property
    def criteria(self) -> dict[str, float]:
        return {
            MODIFICATIONS: self.modification_count,
            MULTI_ACTOR_ACCESSES: self.multi_actor_access_count,
            OUTPUT_FLOWS: self.output_flow_count,
            **self.extra,
        }


_ACCESS_KINDS = (EventKind.OBJECT_ACCESSED, EventKind.OBJECT_MODIFIED)


def compute_stats(store: Iterable[TraceEvent], object_id: str) -> ObjectUsageStats:
    """Usage criteria of one object; untouched objects get all-zero stats."""
    return compute_all_stats(store, [object_id])[object_id]


def compute_all_stats(
    store: Iterable[TraceEvent], object_ids: Optional[Iterable[str]] = None
) -> dict[str, ObjectUsageStats]:
    """Usage criteria for every object seen in ``store`` plus ``object_ids``.

    - modifications: ObjectModified events on the object.
    - multi-actor accesses: access/modify events whose actor is the third
      or later distinct actor (by first appearance) to touch the object.
    - output flows: completions of activity executions that modified the
      object as one of their outputs.
    """
    events = [ev.event for ev in store]
    stats: dict[str, ObjectUsageStats] = {}
    actor_rank: dict[str, dict[str, int]] = defaultdict(dict)
    producers: dict[tuple[Optional[str], Optional[str]], set[str]] = defaultdict(set)

    def get(oid: str) -> ObjectUsageStats:
        if oid not in stats:
            stats[oid] = ObjectUsageStats(oid)
        return stats[oid]

    for e in events:
        if e.object_id is None:
            continue
        row = get(e.object_id)
        if e.kind in _ACCESS_KINDS:
            ranks = actor_rank[e.object_id]
            if e.actor_id not in ranks:
                ranks[e.actor_id] = len(ranks) + 1
            if ranks[e.actor_id] >= 3:
                row.multi_actor_access_count += 1
        if e.kind is EventKind.OBJECT_MODIFIED:
            row.modification_count += 1
            producers[(e.instance_id, e.activity_id)].add(e.object_id)

    completed: set[tuple[Optional[str], Optional[str]]] = set()
    for e in events:
        if e.kind is not EventKind.ACTIVITY_COMPLETED:
            continue
        key = (e.instance_id, e.activity_id)
        if key in completed:
            continue
        completed.add(key)
        for oid in producers.get(key, ()):
            get(oid).output_flow_count += 1

    for oid in object_ids or ():
        get(oid)
    return dict(sorted(stats.items()))
