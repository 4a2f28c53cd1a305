"""Product/process/organization meta-model and its monitoring extension.

Holds the organizational entities (actors, roles, access rights), the
business objects, the process definitions executed by the engine, and the
monitoring extension (indicators, rules, regulator, interface views).
Structural validation of definitions and access-right checks live here too.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict, deque
from dataclasses import dataclass, fields, is_dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Optional, Sequence

if TYPE_CHECKING:
    from collabmon.indicators import IndicatorKind
    from collabmon.regulation import AcceptancePolicy, RegulationAction


class Permission(str, Enum):
    READ = "Read"
    WRITE = "Write"
    VALIDATE = "Validate"


class Structuring(str, Enum):
    MECHANISTIC = "Mechanistic"
    SYSTEMIC = "Systemic"
    EMERGING = "Emerging"


class Category(str, Enum):
    ADMINISTRATIVE = "Administrative"
    PRODUCTION = "Production"


class Variability(str, Enum):
    PERMANENT = "Permanent"
    VARYING = "Varying"


class ActivityKind(str, Enum):
    TASK = "Task"
    VALIDATION = "Validation"
    CHANGE_REQUEST = "ChangeRequest"
    INFORMATION_SEARCH = "InformationSearch"
    EXCHANGE = "Exchange"


class Direction(str, Enum):
    AT_LEAST = "AtLeast"
    AT_MOST = "AtMost"


class RegulatorKind(str, Enum):
    HUMAN = "Human"
    AUTOMATED = "Automated"


class ViewTarget(str, Enum):
    ORGA = "Orga"
    PROC = "Proc"
    PROD = "Prod"


class UnknownRole(KeyError):
    """A role identifier held by an actor does not resolve in the role table."""


# --- organization ----------------------------------------------------------


@dataclass(frozen=True, order=True)
class AccessRight:
    object_class: str
    permission: Permission


@dataclass
class Role:
    id: str
    name: str
    rights: frozenset[AccessRight] = frozenset()

    def __post_init__(self) -> None:
        self.rights = frozenset(self.rights)

    def grants(self, object_class: str, permission: Permission) -> bool:
        return AccessRight(object_class, Permission(permission)) in self.rights


@dataclass
class Actor:
    id: str
    name: str
    role_ids: frozenset[str]
    external: bool = False

    def __post_init__(self) -> None:
        self.role_ids = frozenset(self.role_ids)
        if not self.role_ids:
            raise ValueError(f"actor {self.id!r} must hold at least one role")


# --- product ---------------------------------------------------------------


@dataclass
class BusinessObject:
    id: str
    object_class: str
    version: int = 0
    state: str = "draft"

    def bump(self) -> int:
        self.version += 1
        return self.version


# --- process ---------------------------------------------------------------


@dataclass(frozen=True)
class Activity:
    id: str
    name: str
    kind: ActivityKind
    required_role: str
    inputs: frozenset[str] = frozenset()
    outputs: frozenset[str] = frozenset()
    expected_duration: int = 1
    # payload kind reported by Exchange activities
    channel: str = ""
    # actors addressed by notification activities
    recipients: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ActivityKind(self.kind))
        object.__setattr__(self, "inputs", frozenset(self.inputs))
        object.__setattr__(self, "outputs", frozenset(self.outputs))
        object.__setattr__(self, "recipients", tuple(self.recipients))


@dataclass(frozen=True)
class Transition:
    source: str
    target: str
    guard: Optional[str] = None


@dataclass(frozen=True)
class EventPattern:
    action: str
    object_class: Optional[str] = None

    def matches(self, kind: str, object_class: Optional[str]) -> bool:
        if str(getattr(kind, "value", kind)) != self.action:
            return False
        return self.object_class is None or self.object_class == object_class


@dataclass(frozen=True)
class Trigger:
    pattern: EventPattern
    activity: str


@dataclass(frozen=True)
class ProcessDefinition:
    id: str
    name: str
    structuring: Structuring
    category: Category = Category.PRODUCTION
    variability: Variability = Variability.PERMANENT
    activities: tuple[Activity, ...] = ()
    transitions: tuple[Transition, ...] = ()
    triggers: tuple[Trigger, ...] = ()
    # systemic entry activities, enabled at instantiation
    entries: tuple[str, ...] = ()
    revision: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "structuring", Structuring(self.structuring))
        object.__setattr__(self, "category", Category(self.category))
        object.__setattr__(self, "variability", Variability(self.variability))
        for name in ("activities", "transitions", "triggers", "entries"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def activity(self, activity_id: str) -> Activity:
        for act in self.activities:
            if act.id == activity_id:
                return act
        raise KeyError(activity_id)

    def has_activity(self, activity_id: str) -> bool:
        return any(act.id == activity_id for act in self.activities)

    def predecessors(self, activity_id: str) -> list[str]:
        return sorted({t.source for t in self.transitions if t.target == activity_id})

    def successors(self, activity_id: str) -> list[str]:
        return sorted({t.target for t in self.transitions if t.source == activity_id})

    def start_activities(self) -> list[str]:
        if self.structuring is Structuring.SYSTEMIC:
            return sorted(set(self.entries))
        targets = {t.target for t in self.transitions}
        return sorted(a.id for a in self.activities if a.id not in targets)


# --- monitoring extension --------------------------------------------------


@dataclass(frozen=True)
class Threshold:
    value: float
    direction: Direction

    def __post_init__(self) -> None:
        object.__setattr__(self, "direction", Direction(self.direction))
        if not math.isfinite(self.value):
            raise ValueError("threshold value must be finite")

    def crossed_by(self, value: float) -> bool:
        # inclusive on both sides
        if self.direction is Direction.AT_LEAST:
            return value >= self.value
        return value <= self.value


@dataclass(frozen=True)
class Indicator:
    id: str
    objective: str
    calculation: IndicatorKind
    threshold: Threshold
    window: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.objective.strip():
            raise ValueError(f"indicator {self.id!r} needs an objective")
        if self.window is not None and self.window < 0:
            raise ValueError("window span must be non-negative")


@dataclass(frozen=True)
class Regulator:
    id: str
    kind: RegulatorKind
    acceptance_policy: AcceptancePolicy

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", RegulatorKind(self.kind))


@dataclass(frozen=True)
class Rule:
    id: str
    indicator_id: str
    action: RegulationAction
    priority: int = 0


@dataclass(frozen=True)
class InterfaceView:
    target: ViewTarget
    visible_classes: frozenset[str] = frozenset()
    granted: frozenset[AccessRight] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "target", ViewTarget(self.target))
        object.__setattr__(self, "visible_classes", frozenset(self.visible_classes))
        object.__setattr__(self, "granted", frozenset(self.granted))


# --- validation ------------------------------------------------------------


@dataclass(frozen=True)
class ValidationFault:
    element: str
    detail: str = ""

    @property
    def code(self) -> str:
        return type(self).__name__

    def __str__(self) -> str:
        text = f"{self.code}({self.element})"
        return f"{text}: {self.detail}" if self.detail else text


class DuplicateIdFault(ValidationFault): ...
class SelfLoopFault(ValidationFault): ...
class DanglingReferenceFault(ValidationFault): ...
class CycleFault(ValidationFault): ...
class NoStartFault(ValidationFault): ...
class NoEndFault(ValidationFault): ...
class DisconnectedFault(ValidationFault): ...
class DurationFault(ValidationFault): ...
class UnknownRoleFault(ValidationFault): ...
class PermissionFault(ValidationFault): ...
class UntriggerableFault(ValidationFault): ...
class StructuringFault(ValidationFault): ...


def validate_definition(
    definition: ProcessDefinition, roles: Optional[Mapping[str, Role]] = None
) -> list[ValidationFault]:
    """Return the structural faults of ``definition`` (empty when sound).

    Role-dependent checks (unknown roles, Validate permission on the outputs
    of Validation activities) only run when ``roles`` is given.
    """
    faults: list[ValidationFault] = []
    ids = [a.id for a in definition.activities]
    seen: set[str] = set()
    for act_id in ids:
        if act_id in seen:
            faults.append(DuplicateIdFault(act_id, "activity id used twice"))
        seen.add(act_id)

    for act in definition.activities:
        if act.expected_duration < 0 or (
            act.expected_duration == 0 and act.kind is not ActivityKind.EXCHANGE
        ):
            faults.append(DurationFault(act.id, f"expected_duration={act.expected_duration}"))
        if roles is not None:
            role = roles.get(act.required_role)
            if role is None:
                faults.append(UnknownRoleFault(act.id, f"role {act.required_role!r} not declared"))
            elif act.kind is ActivityKind.VALIDATION:
                for cls in sorted(act.outputs):
                    if not role.grants(cls, Permission.VALIDATE):
                        faults.append(PermissionFault(
                            act.id, f"role {role.id!r} lacks Validate on {cls!r}"
                        ))

    if definition.structuring is Structuring.MECHANISTIC:
        faults.extend(_mechanistic_faults(definition, seen))
    elif definition.structuring is Structuring.SYSTEMIC:
        faults.extend(_systemic_faults(definition, seen))
    else:
        if definition.transitions:
            faults.append(StructuringFault(definition.id, "emerging definition carries transitions"))
        if definition.triggers or definition.entries:
            faults.append(StructuringFault(definition.id, "emerging definition carries triggers"))
    return faults


def _mechanistic_faults(definition: ProcessDefinition, ids: set[str]) -> list[ValidationFault]:
    faults: list[ValidationFault] = []
    if definition.triggers or definition.entries:
        faults.append(StructuringFault(definition.id, "mechanistic definition carries triggers"))
    if not ids:
        faults.append(NoStartFault(definition.id, "no activities"))
        return faults

    edges: set[tuple[str, str]] = set()
    for t in definition.transitions:
        if t.source == t.target:
            faults.append(SelfLoopFault(t.source))
            continue
        dangling = [end for end in (t.source, t.target) if end not in ids]
        if dangling:
            for end in dangling:
                faults.append(DanglingReferenceFault(end, f"transition {t.source}->{t.target}"))
            continue
        edges.add((t.source, t.target))

    succ: dict[str, set[str]] = defaultdict(set)
    indeg = {i: 0 for i in ids}
    outdeg = {i: 0 for i in ids}
    for src, dst in edges:
        succ[src].add(dst)
        indeg[dst] += 1
        outdeg[src] += 1

    starts = sorted(i for i in ids if indeg[i] == 0)
    if not starts:
        faults.append(NoStartFault(definition.id, "every activity has a predecessor"))
    if not any(outdeg[i] == 0 for i in ids):
        faults.append(NoEndFault(definition.id, "every activity has a successor"))

    # Kahn's algorithm; leftovers sit on a cycle
    remaining = dict(indeg)
    queue = deque(starts)
    ordered = 0
    while queue:
        node = queue.popleft()
        ordered += 1
        for nxt in sorted(succ[node]):
            remaining[nxt] -= 1
            if remaining[nxt] == 0:
                queue.append(nxt)
    if ordered < len(ids):
        cyclic = sorted(i for i in ids if remaining[i] > 0)
        faults.append(CycleFault(cyclic[0], "cycle through " + ",".join(cyclic)))

    # weak connectivity
    undirected: dict[str, set[str]] = defaultdict(set)
    for src, dst in edges:
        undirected[src].add(dst)
        undirected[dst].add(src)
    first = sorted(ids)[0]
    component = {first}
    stack = [first]
    while stack:
        for nxt in undirected[stack.pop()]:
            if nxt not in component:
                component.add(nxt)
                stack.append(nxt)
    for orphan in sorted(ids - component):
        faults.append(DisconnectedFault(orphan, f"not connected to {first!r}"))
    return faults


def _systemic_faults(definition: ProcessDefinition, ids: set[str]) -> list[ValidationFault]:
    faults: list[ValidationFault] = []
    if definition.transitions:
        faults.append(StructuringFault(definition.id, "systemic definition carries transitions"))
    if not definition.entries:
        faults.append(NoStartFault(definition.id, "no entry activity"))
    for entry in definition.entries:
        if entry not in ids:
            faults.append(DanglingReferenceFault(entry, "entry"))
    triggered = set(definition.entries)
    for trig in definition.triggers:
        if trig.activity not in ids:
            faults.append(DanglingReferenceFault(trig.activity, f"trigger on {trig.pattern.action}"))
        triggered.add(trig.activity)
    for act_id in sorted(ids - triggered):
        faults.append(UntriggerableFault(act_id, "neither an entry nor a trigger target"))
    return faults


# --- access ---------------------------------------------------------------


def check_access(
    actor: Actor,
    roles: Mapping[str, Role],
    permission: Permission | str,
    object_class: str,
) -> bool:
    permission = Permission(permission)
    granted = False
    # resolve every role first so a dangling id always surfaces
    for role_id in sorted(actor.role_ids):
        if role_id not in roles:
            raise UnknownRole(role_id)
        granted = granted or roles[role_id].grants(object_class, permission)
    return granted


# --- interface views -------------------------------------------------------

def entity_class(entity: Any) -> str:
    """Class key used by views: the object class for business objects, else the type name."""
    if isinstance(entity, BusinessObject):
        return entity.object_class
    return type(entity).__name__


def view_query(view: InterfaceView, universe: Iterable[Any]) -> list[Any]:
    """Entities of ``universe`` whose class is visible through ``view``, in input order."""
    return [e for e in universe if entity_class(e) in view.visible_classes]


def view_fields(view: InterfaceView, entity: Any) -> dict[str, Any]:
    """Field projection of one entity as permitted by the view's granted rights.

    Identity fields are always visible; every other field needs a granted
    right on the entity's class.
    """
    cls = entity_class(entity)
    if cls not in view.visible_classes:
        return {}
    values = {f.name: getattr(entity, f.name) for f in fields(entity)}
    if any(r.object_class == cls for r in view.granted):
        return values
    keep = {"id", "object_class", "name"}
    return {k: v for k, v in values.items() if k in keep}


def roles_by_id(roles: Sequence[Role]) -> dict[str, Role]:
    return {r.id: r for r in roles}


def to_plain(obj: Any) -> Any:
    """JSON-ready form of model objects; sets become sorted lists."""
    if isinstance(obj, Enum):
        return obj.value
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (set, frozenset)):
        items = [to_plain(x) for x in obj]
        return sorted(items, key=lambda v: json.dumps(v, sort_keys=True))
    if isinstance(obj, (list, tuple)):
        return [to_plain(x) for x in obj]
    if isinstance(obj, Mapping):
        return {str(k): to_plain(v) for k, v in obj.items()}
    return obj
