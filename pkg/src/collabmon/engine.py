"""Deterministic simulated-time executor for mechanistic and systemic processes.

Every state change is reported as one :class:`EngineEvent` handed to the
engine's sink (normally the collector's ``collect``). Time is an abstract
integer clock; nothing here reads the wall clock.
"""
from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, MutableMapping, Optional, Sequence

from collabmon.metamodel import (
    Activity,
    ActivityKind,
    Actor,
    BusinessObject,
    Permission,
    ProcessDefinition,
    Role,
    Structuring,
    check_access,
    validate_definition,
)


class EventKind(str, Enum):
    ACTIVITY_ENABLED = "ActivityEnabled"
    ACTIVITY_STARTED = "ActivityStarted"
    ACTIVITY_COMPLETED = "ActivityCompleted"
    OBJECT_MODIFIED = "ObjectModified"
    OBJECT_ACCESSED = "ObjectAccessed"
    VALIDATION_REQUESTED = "ValidationRequested"
    CHANGE_REQUESTED = "ChangeRequested"
    SEARCH_PERFORMED = "SearchPerformed"
    EXCHANGE_PERFORMED = "ExchangePerformed"
    DEADLINE_MISSED = "DeadlineMissed"
    # audit record appended by the regulation loop
    DEFINITION_REVISED = "DefinitionRevised"


class ActivityState(str, Enum):
    PENDING = "Pending"
    ENABLED = "Enabled"
    RUNNING = "Running"
    COMPLETED = "Completed"
    SKIPPED = "Skipped"


_KIND_EVENT = {
    ActivityKind.VALIDATION: EventKind.VALIDATION_REQUESTED,
    ActivityKind.CHANGE_REQUEST: EventKind.CHANGE_REQUESTED,
    ActivityKind.INFORMATION_SEARCH: EventKind.SEARCH_PERFORMED,
    ActivityKind.EXCHANGE: EventKind.EXCHANGE_PERFORMED,
}

# (permission, which side of the activity it applies to)
_KIND_PERMISSION = {
    ActivityKind.TASK: (Permission.WRITE, "outputs"),
    ActivityKind.VALIDATION: (Permission.VALIDATE, "outputs"),
    ActivityKind.CHANGE_REQUEST: (Permission.WRITE, "outputs"),
    ActivityKind.INFORMATION_SEARCH: (Permission.READ, "inputs"),
    ActivityKind.EXCHANGE: (Permission.READ, "inputs"),
}


class EngineError(Exception):
    pass


class DefinitionInvalid(EngineError):
    def __init__(self, definition_id: str, faults: Sequence[Any]):
        self.faults = list(faults)
        super().__init__(f"{definition_id}: " + "; ".join(map(str, self.faults)))


class MissingBinding(EngineError):
    pass


class NotEnabled(EngineError):
    pass


class AccessDenied(EngineError):
    pass


class NoEligibleActor(EngineError):
    pass


class Stalled(EngineError):
    """Activities remain unfinished while none is enabled."""

    def __init__(self, instance_id: str, pending: Sequence[str], trace: Sequence["EngineEvent"] = ()):
        self.pending = list(pending)
        self.trace = list(trace)
        super().__init__(f"instance {instance_id} stalled with {', '.join(self.pending)} unfinished")


@dataclass(frozen=True)
class EngineEvent:
    kind: EventKind
    process_id: Optional[str]
    revision: Optional[int]
    instance_id: Optional[str]
    activity_id: Optional[str]
    actor_id: Optional[str]
    object_id: Optional[str]
    at: int
    version: Optional[int] = None
    detail: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EventKind(self.kind))

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "process_id": self.process_id,
            "revision": self.revision,
            "instance_id": self.instance_id,
            "activity_id": self.activity_id,
            "actor_id": self.actor_id,
            "object_id": self.object_id,
            "at": self.at,
            "version": self.version,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EngineEvent":
        return cls(
            kind=EventKind(data["kind"]),
            process_id=data.get("process_id"),
            revision=data.get("revision"),
            instance_id=data.get("instance_id"),
            activity_id=data.get("activity_id"),
            actor_id=data.get("actor_id"),
            object_id=data.get("object_id"),
            at=int(data["at"]),
            version=data.get("version"),
            detail=data.get("detail"),
        )


@dataclass
class ProcessInstance:
    id: str
    definition: ProcessDefinition
    activity_states: dict[str, ActivityState]
    clock: int
    bound_objects: dict[str, str] = field(default_factory=dict)
    started_at: int = 0

    @property
    def definition_id(self) -> str:
        return self.definition.id

    @property
    def revision(self) -> int:
        return self.definition.revision

    def enabled(self) -> list[str]:
        return sorted(a for a, s in self.activity_states.items() if s is ActivityState.ENABLED)

    def unfinished(self) -> list[str]:
        return sorted(a for a, s in self.activity_states.items()
                      if s not in (ActivityState.COMPLETED, ActivityState.SKIPPED))

    @property
    def done(self) -> bool:
        return not self.unfinished()


@dataclass
class ExecutionPolicy:
    """Seeded actor assignment and duration sampling.

    Durations are the activity's expected duration scaled by a factor drawn
    uniformly from the range configured for its kind, rounded, at least 1.
    Zero-duration activities stay instantaneous.
    """

    actors: Sequence[Actor]
    duration_factors: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    default_factor: tuple[float, float] = (1.0, 1.0)

    def pick_actor(self, activity: Activity, rng: random.Random) -> Actor:
        candidates = sorted(
            (a for a in self.actors if activity.required_role in a.role_ids), key=lambda a: a.id
        )
        if not candidates:
            raise NoEligibleActor(f"no actor holds role {activity.required_role!r}")
        return rng.choice(candidates)

    def draw_duration(self, activity: Activity, rng: random.Random) -> int:
        lo, hi = self.duration_factors.get(activity.kind.value, self.default_factor)
        factor = rng.uniform(lo, hi)
        if activity.expected_duration == 0:
            return 0
        return max(1, round(activity.expected_duration * factor))


class Engine:
    """Executes process instances against a shared object store and role table."""

    def __init__(
        self,
        roles: Mapping[str, Role],
        objects: Optional[MutableMapping[str, BusinessObject]] = None,
        sink: Optional[Callable[[EngineEvent], Any]] = None,
    ):
        self.roles = roles
        self.objects: MutableMapping[str, BusinessObject] = objects if objects is not None else {}
        self.sink = sink
        self._counter = 0

    def _emit(self, out: list[EngineEvent], event: EngineEvent) -> None:
        out.append(event)
        if self.sink is not None:
            self.sink(event)

    def _event(self, instance: ProcessInstance, kind: EventKind, **kw: Any) -> EngineEvent:
        kw.setdefault("at", instance.clock)
        return EngineEvent(
            kind=kind,
            process_id=instance.definition_id,
            revision=instance.revision,
            instance_id=instance.id,
            activity_id=kw.pop("activity_id", None),
            actor_id=kw.pop("actor_id", None),
            object_id=kw.pop("object_id", None),
            **kw,
        )

    def instantiate(
        self,
        definition: ProcessDefinition,
        bindings: Mapping[str, str],
        at: int = 0,
        instance_id: Optional[str] = None,
    ) -> ProcessInstance:
        faults = validate_definition(definition, self.roles)
        if definition.structuring is Structuring.EMERGING:
            faults = faults or ["emerging processes are reconstructed from traces, not executed"]
        if faults:
            raise DefinitionInvalid(definition.id, faults)

        starts = definition.start_activities()
        for act_id in starts:
            missing = sorted(definition.activity(act_id).inputs - set(bindings))
            if missing:
                raise MissingBinding(f"{definition.id}/{act_id} needs {', '.join(missing)}")

        if instance_id is None:
            self._counter += 1
            instance_id = f"{definition.id}#{self._counter}"
        for cls, obj_id in sorted(bindings.items()):
            if obj_id not in self.objects:
                self.objects[obj_id] = BusinessObject(obj_id, cls)

        instance = ProcessInstance(
            id=instance_id,
            definition=definition,
            activity_states={a.id: ActivityState.PENDING for a in definition.activities},
            clock=at,
            bound_objects=dict(bindings),
            started_at=at,
        )
        trace: list[EngineEvent] = []
        for act_id in starts:
            instance.activity_states[act_id] = ActivityState.ENABLED
            self._emit(trace, self._event(instance, EventKind.ACTIVITY_ENABLED, activity_id=act_id))
        return instance

    def _touched(self, instance: ProcessInstance, classes: Iterable[str]) -> list[str]:
        return [instance.bound_objects[c] for c in sorted(classes) if c in instance.bound_objects]

    def perform(
        self, instance: ProcessInstance, activity_id: str, actor: Actor, duration: int
    ) -> list[EngineEvent]:
        state = instance.activity_states.get(activity_id)
        if state is not ActivityState.ENABLED:
            raise NotEnabled(f"{instance.id}/{activity_id} is {state.value if state else 'unknown'}")
        if duration < 0:
            raise ValueError("duration must be non-negative")
        activity = instance.definition.activity(activity_id)
        trace: list[EngineEvent] = []

        permission, side = _KIND_PERMISSION[activity.kind]
        for cls in sorted(getattr(activity, side)):
            if not check_access(actor, self.roles, permission, cls):
                self._emit(trace, self._event(
                    instance, EventKind.OBJECT_ACCESSED, activity_id=activity_id,
                    actor_id=actor.id, object_id=instance.bound_objects.get(cls),
                    detail=f"denied:{permission.value}:{cls}",
                ))
                raise AccessDenied(f"{actor.id} lacks {permission.value} on {cls} for {activity_id}")

        def emit(kind: EventKind, **kw: Any) -> None:
            self._emit(trace, self._event(instance, kind, activity_id=activity_id, actor_id=actor.id, **kw))

        instance.activity_states[activity_id] = ActivityState.RUNNING
        emit(EventKind.ACTIVITY_STARTED)
        for obj_id in self._touched(instance, activity.inputs):
            emit(EventKind.OBJECT_ACCESSED, object_id=obj_id)

        kind_event = _KIND_EVENT.get(activity.kind)
        if kind_event is not None:
            detail = (activity.channel or "unspecified") if activity.kind is ActivityKind.EXCHANGE else None
            touched = sorted(set(self._touched(instance, activity.inputs | activity.outputs)))
            for obj_id in touched or [None]:
                emit(kind_event, object_id=obj_id, detail=detail)

        instance.clock += duration
        for cls in sorted(activity.outputs):
            obj_id = instance.bound_objects.get(cls)
            if obj_id is None:
                obj_id = f"{instance.id}/{cls}"
                instance.bound_objects[cls] = obj_id
            obj = self.objects.setdefault(obj_id, BusinessObject(obj_id, cls))
            emit(EventKind.OBJECT_MODIFIED, object_id=obj_id, version=obj.bump())
        if duration > activity.expected_duration:
            emit(EventKind.DEADLINE_MISSED, detail=f"{duration}>{activity.expected_duration}")
        instance.activity_states[activity_id] = ActivityState.COMPLETED
        emit(EventKind.ACTIVITY_COMPLETED)

        for nxt in self._next_enabled(instance, activity_id, trace):
            instance.activity_states[nxt] = ActivityState.ENABLED
            self._emit(trace, self._event(instance, EventKind.ACTIVITY_ENABLED, activity_id=nxt))
        return trace

    def _next_enabled(
        self, instance: ProcessInstance, completed: str, emitted: Sequence[EngineEvent]
    ) -> list[str]:
        definition = instance.definition
        states = instance.activity_states
        if definition.structuring is Structuring.MECHANISTIC:
            # guards are opaque labels and count as satisfied
            return [
                succ for succ in definition.successors(completed)
                if states[succ] is ActivityState.PENDING
                and all(states[p] is ActivityState.COMPLETED for p in definition.predecessors(succ))
            ]
        observed = [(ev.kind, self._class_of(ev.object_id)) for ev in emitted]
        hits = set()
        for trig in definition.triggers:
            if states.get(trig.activity) is not ActivityState.PENDING:
                continue
            if any(trig.pattern.matches(kind, cls) for kind, cls in observed):
                hits.add(trig.activity)
        return sorted(hits)

    def _class_of(self, object_id: Optional[str]) -> Optional[str]:
        obj = self.objects.get(object_id) if object_id is not None else None
        return obj.object_class if obj is not None else None

    def step(self, instance: ProcessInstance, policy: ExecutionPolicy, rng: random.Random) -> list[EngineEvent]:
        """Perform the lowest-id enabled activity of ``instance``."""
        enabled = instance.enabled()
        if not enabled:
            return []
        activity = instance.definition.activity(enabled[0])
        actor = policy.pick_actor(activity, rng)
        duration = policy.draw_duration(activity, rng)
        return self.perform(instance, activity.id, actor, duration)

    def run_to_completion(
        self, instance: ProcessInstance, policy: ExecutionPolicy, seed: int | str = 0
    ) -> list[EngineEvent]:
        rng = random.Random(seed)
        trace: list[EngineEvent] = []
        while instance.enabled():
            trace.extend(self.step(instance, policy, rng))
        if not instance.done:
            raise Stalled(instance.id, instance.unfinished(), trace)
        return trace


def reconstruct_emerging(trace: Iterable[Any]) -> dict[str, list[str]]:
    """Per-instance activity sequences redrawn from completion events.

    Accepts collected trace events (ordered by their ``seq``) or bare engine
    events (ordered by position). Sequences follow completion time, ties
    broken by sequence number.
    """
    completions: dict[str, list[tuple[int, int, str]]] = defaultdict(list)
    for position, item in enumerate(trace):
        event = getattr(item, "event", item)
        seq = getattr(item, "seq", position)
        if event.kind is EventKind.ACTIVITY_COMPLETED and event.instance_id is not None:
            completions[event.instance_id].append((event.at, seq, event.activity_id))
    return {inst: [act for _, _, act in sorted(rows)] for inst, rows in sorted(completions.items())}
