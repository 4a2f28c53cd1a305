"""Detection, adaptation, acceptance and implementation of regulation actions.

A breach opens a :class:`RegulationCase`. Adaptation picks the action of the
highest-priority applicable rule, acceptance applies the regulator's policy
to the stakeholders' votes, and implementation mutates the definition or
role store under a single-writer lock, appending an audit event to the trace.
"""
from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, ClassVar, Iterable, Mapping, Optional, Sequence, Union

from collabmon.engine import EngineEvent, EventKind
from collabmon.indicators import Breach, check
from collabmon.metamodel import (
    AccessRight,
    Activity,
    ActivityKind,
    Indicator,
    Permission,
    ProcessDefinition,
    Regulator,
    Role,
    Rule,
    Structuring,
    Transition,
    to_plain,
    validate_definition,
)
from collabmon.observation import TraceEvent, TraceStore


class RegulationError(Exception):
    pass


class InvalidState(RegulationError):
    pass


class MissingVotes(RegulationError):
    pass


class MutationUnsound(RegulationError):
    def __init__(self, message: str, faults: Sequence[Any] = ()):
        self.faults = list(faults)
        super().__init__(message)


class CaseState(str, Enum):
    DETECTED = "Detected"
    ADAPTED = "Adapted"
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"
    IMPLEMENTED = "Implemented"


# Detected -> Rejected only when adaptation finds no applicable rule
ALLOWED_TRANSITIONS = {
    CaseState.DETECTED: frozenset({CaseState.ADAPTED, CaseState.REJECTED}),
    CaseState.ADAPTED: frozenset({CaseState.ACCEPTED, CaseState.REJECTED}),
    CaseState.ACCEPTED: frozenset({CaseState.IMPLEMENTED}),
    CaseState.REJECTED: frozenset(),
    CaseState.IMPLEMENTED: frozenset(),
}

NO_APPLICABLE_RULE = "NoApplicableRule"


class AcceptanceKind(str, Enum):
    AUTO = "Auto"
    QUORUM = "Quorum"
    UNANIMOUS = "Unanimous"


@dataclass(frozen=True)
class AcceptancePolicy:
    kind: AcceptanceKind = AcceptanceKind.AUTO
    quorum: Optional[float] = None
    stakeholders: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AcceptanceKind(self.kind))
        object.__setattr__(self, "stakeholders", tuple(sorted(set(self.stakeholders))))
        if self.kind is AcceptanceKind.QUORUM:
            if self.quorum is None or not 0 < self.quorum <= 1:
                raise ValueError("quorum fraction must lie in (0, 1]")
        if self.kind is not AcceptanceKind.AUTO and not self.stakeholders:
            raise ValueError(f"{self.kind.value} acceptance needs stakeholders")

    @property
    def needs_votes(self) -> bool:
        return self.kind is not AcceptanceKind.AUTO


# --- stores -----------------------------------------------------------------


def _fingerprint(payload: Any) -> str:
    blob = json.dumps(to_plain(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


class DefinitionStore:
    """Current definitions plus every past revision, keyed by process id."""

    def __init__(self, definitions: Iterable[ProcessDefinition] = ()):
        self.history: dict[str, list[ProcessDefinition]] = {}
        for d in definitions:
            if d.id in self.history:
                raise ValueError(f"duplicate process id {d.id!r}")
            self.history[d.id] = [d]
        self.lock = threading.RLock()

    def __contains__(self, process_id: object) -> bool:
        return process_id in self.history

    def __iter__(self):
        return iter(self.current())

    def get(self, process_id: str) -> ProcessDefinition:
        return self.history[process_id][-1]

    def ids(self) -> list[str]:
        return sorted(self.history)

    def current(self) -> list[ProcessDefinition]:
        return [self.history[i][-1] for i in self.ids()]

    def replace(self, definition: ProcessDefinition) -> None:
        expected = self.get(definition.id).revision + 1
        if definition.revision != expected:
            raise ValueError(f"{definition.id}: revision {definition.revision}, expected {expected}")
        self.history[definition.id].append(definition)

    def fingerprint(self) -> str:
        return _fingerprint(self.current())


class RoleStore:
    def __init__(self, roles: Iterable[Role] = ()):
        self.roles: dict[str, Role] = {r.id: r for r in roles}
        self.revision = 0

    def __contains__(self, role_id: object) -> bool:
        return role_id in self.roles

    def get(self, role_id: str) -> Role:
        return self.roles[role_id]

    def replace(self, role: Role) -> None:
        self.roles[role.id] = role
        self.revision += 1

    def fingerprint(self) -> str:
        return _fingerprint([self.roles[k] for k in sorted(self.roles)] + [self.revision])


# --- actions ----------------------------------------------------------------


class RegulationAction:
    """Base of the action catalogue; subclasses are frozen dataclasses."""

    registry: ClassVar[dict[str, type["RegulationAction"]]] = {}

    def __init_subclass__(cls, **kw: Any) -> None:
        super().__init_subclass__(**kw)
        RegulationAction.registry[cls.__name__] = cls

    @property
    def target(self) -> str:
        raise NotImplementedError

    @property
    def process(self) -> Optional[str]:
        """Process the action rewrites; ``None`` for role-level actions."""
        return getattr(self, "process_id", None)

    def resolves(self, defs: DefinitionStore, roles: RoleStore) -> bool:
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        return {"type": type(self).__name__, **to_plain(self)}


def action_from_dict(data: Mapping[str, Any]) -> RegulationAction:
    payload = dict(data)
    name = payload.pop("type")
    cls = RegulationAction.registry.get(name)
    if cls is None:
        raise ValueError(f"unknown regulation action {name!r}")
    if cls is GrantAccessRight:
        right = payload["right"]
        payload["right"] = AccessRight(right["object_class"], Permission(right["permission"]))
    if cls is AddNotification:
        payload["recipients"] = tuple(payload.get("recipients", ()))
    return cls(**payload)


class ProcessAction(RegulationAction):
    """Action rewriting one process definition."""

    def resolves(self, defs: DefinitionStore, roles: RoleStore) -> bool:
        return self.process_id in defs and self.applicable(defs.get(self.process_id), roles)

    def applicable(self, definition: ProcessDefinition, roles: RoleStore) -> bool:
        raise NotImplementedError

    def mutate(self, definition: ProcessDefinition) -> ProcessDefinition:
        raise NotImplementedError


def _rebuilt(definition: ProcessDefinition, activities, transitions, **kw: Any) -> ProcessDefinition:
    unique: dict[tuple[str, str], Transition] = {}
    for t in transitions:
        unique.setdefault((t.source, t.target), t)
    return replace(
        definition,
        activities=tuple(activities),
        transitions=tuple(unique.values()),
        revision=definition.revision + 1,
        **kw,
    )


@dataclass(frozen=True)
class RemoveValidationStep(ProcessAction):
    process_id: str
    activity_id: str

    @property
    def target(self) -> str:
        return f"{self.process_id}/{self.activity_id}"

    def applicable(self, definition, roles):
        return (definition.has_activity(self.activity_id)
                and definition.activity(self.activity_id).kind is ActivityKind.VALIDATION)

    def mutate(self, definition):
        v = self.activity_id
        activities = [a for a in definition.activities if a.id != v]
        if definition.structuring is Structuring.SYSTEMIC:
            return _rebuilt(
                definition, activities, (),
                triggers=tuple(t for t in definition.triggers if t.activity != v),
                entries=tuple(e for e in definition.entries if e != v),
            )
        kept = [t for t in definition.transitions if v not in (t.source, t.target)]
        bridges = [Transition(p, s) for p in definition.predecessors(v) for s in definition.successors(v)]
        return _rebuilt(definition, activities, kept + bridges)


@dataclass(frozen=True)
class MergeActivities(ProcessAction):
    """Fuse ``b`` into ``a``: union of inputs and outputs, summed durations."""

    process_id: str
    a: str
    b: str

    @property
    def target(self) -> str:
        return f"{self.process_id}/{self.a}+{self.b}"

    def applicable(self, definition, roles):
        return (definition.structuring is Structuring.MECHANISTIC and self.a != self.b
                and definition.has_activity(self.a) and definition.has_activity(self.b))

    def mutate(self, definition):
        first, second = definition.activity(self.a), definition.activity(self.b)
        merged = replace(
            first,
            inputs=first.inputs | second.inputs,
            outputs=first.outputs | second.outputs,
            expected_duration=first.expected_duration + second.expected_duration,
        )
        activities = [merged if x.id == self.a else x for x in definition.activities if x.id != self.b]
        rename = {self.b: self.a}
        transitions = []
        for t in definition.transitions:
            src, dst = rename.get(t.source, t.source), rename.get(t.target, t.target)
            if src != dst:
                transitions.append(Transition(src, dst, t.guard))
        return _rebuilt(definition, activities, transitions)


@dataclass(frozen=True)
class ParallelizeActivities(ProcessAction):
    """Turn the sequence ``a -> b`` into two branches sharing predecessors and successors."""

    process_id: str
    a: str
    b: str

    @property
    def target(self) -> str:
        return f"{self.process_id}/{self.a}||{self.b}"

    def applicable(self, definition, roles):
        return (definition.structuring is Structuring.MECHANISTIC
                and any(t.source == self.a and t.target == self.b for t in definition.transitions))

    def mutate(self, definition):
        pair = {self.a, self.b}
        preds = (set(definition.predecessors(self.a)) | set(definition.predecessors(self.b))) - pair
        succs = (set(definition.successors(self.a)) | set(definition.successors(self.b))) - pair
        kept = [t for t in definition.transitions if not pair & {t.source, t.target}]
        added = [Transition(p, x) for p in sorted(preds) for x in (self.a, self.b)]
        added += [Transition(x, s) for x in (self.a, self.b) for s in sorted(succs)]
        return _rebuilt(definition, definition.activities, kept + added)


@dataclass(frozen=True)
class ReassignRole(ProcessAction):
    process_id: str
    activity_id: str
    role_id: str

    @property
    def target(self) -> str:
        return f"{self.process_id}/{self.activity_id}"

    def applicable(self, definition, roles):
        return (definition.has_activity(self.activity_id) and self.role_id in roles
                and definition.activity(self.activity_id).required_role != self.role_id)

    def mutate(self, definition):
        activities = [replace(a, required_role=self.role_id) if a.id == self.activity_id else a
                      for a in definition.activities]
        return _rebuilt(definition, activities, definition.transitions)


@dataclass(frozen=True)
class AddNotification(ProcessAction):
    """Append a zero-duration Exchange after the target, as a side branch."""

    process_id: str
    activity_id: str
    recipients: tuple[str, ...] = ()

    @property
    def target(self) -> str:
        return f"{self.process_id}/{self.activity_id}"

    @property
    def notification_id(self) -> str:
        return f"{self.activity_id}.notify"

    def applicable(self, definition, roles):
        return (definition.structuring is Structuring.MECHANISTIC
                and definition.has_activity(self.activity_id)
                and not definition.has_activity(self.notification_id))

    def mutate(self, definition):
        anchor = definition.activity(self.activity_id)
        note = Activity(
            id=self.notification_id,
            name=f"notify after {anchor.name}",
            kind=ActivityKind.EXCHANGE,
            required_role=anchor.required_role,
            expected_duration=0,
            channel="notification",
            recipients=tuple(sorted(self.recipients)),
        )
        return _rebuilt(
            definition,
            list(definition.activities) + [note],
            list(definition.transitions) + [Transition(anchor.id, note.id)],
        )


@dataclass(frozen=True)
class GrantAccessRight(RegulationAction):
    role_id: str
    right: AccessRight

    @property
    def target(self) -> str:
        return f"role:{self.role_id}"

    def resolves(self, defs, roles):
        return self.role_id in roles and self.right not in roles.get(self.role_id).rights

    def granted(self, role: Role) -> Role:
        return replace(role, rights=role.rights | {self.right})


del RegulationAction.registry["ProcessAction"]

RegulationActionT = Union[
    RemoveValidationStep, MergeActivities, ParallelizeActivities,
    GrantAccessRight, ReassignRole, AddNotification,
]


# --- cases ------------------------------------------------------------------


@dataclass(frozen=True)
class AuditEntry:
    from_state: CaseState
    to_state: CaseState
    at: int
    by: str
    reason: str = ""


@dataclass
class RegulationCase:
    id: str
    breach: Breach
    state: CaseState = CaseState.DETECTED
    proposed: Optional[RegulationAction] = None
    rule_id: Optional[str] = None
    votes: dict[str, bool] = field(default_factory=dict)
    audit: list[AuditEntry] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def _move(self, to: CaseState, at: int, by: str, reason: str = "") -> None:
        if to not in ALLOWED_TRANSITIONS[self.state]:
            raise InvalidState(f"{self.id}: {self.state.value} -> {to.value} not allowed")
        self.audit.append(AuditEntry(self.state, to, at, by, reason))
        self.state = to


def _require(case: RegulationCase, state: CaseState, op: str) -> None:
    if case.state is not state:
        raise InvalidState(f"{op} needs {case.id} in {state.value}, found {case.state.value}")


def detect(
    indicators: Iterable[Indicator],
    store: Iterable[TraceEvent],
    id_prefix: str = "case",
) -> list[RegulationCase]:
    events = list(store)
    ordered = sorted(indicators, key=lambda i: (i.id, i.calculation.scope or ""))
    cases = []
    for ind in ordered:
        breach = check(ind, events)
        if breach is not None:
            cases.append(RegulationCase(f"{id_prefix}-{len(cases) + 1}", breach))
    return cases


def adapt(
    case: RegulationCase,
    rules: Iterable[Rule],
    defs: DefinitionStore,
    roles: RoleStore,
    at: int = 0,
    by: str = "regulator",
    mutable: Optional[Iterable[str]] = None,
) -> RegulationCase:
    """Propose the action of the best applicable rule, or reject the case.

    Lower priority numbers win. ``mutable`` restricts which processes may be
    targeted; actions on other processes count as unresolvable.
    """
    _require(case, CaseState.DETECTED, "adapt")
    allowed = None if mutable is None else set(mutable)
    bound = sorted((r for r in rules if r.indicator_id == case.breach.indicator_id),
                   key=lambda r: (r.priority, r.id))
    for rule in bound:
        action = rule.action
        if allowed is not None and action.process is not None and action.process not in allowed:
            continue
        if action.resolves(defs, roles):
            case.proposed = action
            case.rule_id = rule.id
            case._move(CaseState.ADAPTED, at, by, rule.id)
            return case
    case._move(CaseState.REJECTED, at, by, NO_APPLICABLE_RULE)
    return case


def accept(
    case: RegulationCase,
    regulator: Regulator,
    votes: Optional[Mapping[str, bool]] = None,
    at: int = 0,
) -> RegulationCase:
    _require(case, CaseState.ADAPTED, "accept")
    policy = regulator.acceptance_policy
    if votes:
        case.votes.update({k: bool(v) for k, v in votes.items()})
    if policy.kind is AcceptanceKind.AUTO:
        case._move(CaseState.ACCEPTED, at, regulator.id, "auto")
        return case
    missing = [s for s in policy.stakeholders if s not in case.votes]
    if missing:
        raise MissingVotes(f"{case.id}: no vote from {', '.join(missing)}")
    yes = sum(1 for s in policy.stakeholders if case.votes[s])
    if policy.kind is AcceptanceKind.QUORUM:
        ok = yes / len(policy.stakeholders) >= policy.quorum
    else:
        ok = yes == len(policy.stakeholders)
    reason = f"{yes}/{len(policy.stakeholders)} yes"
    case._move(CaseState.ACCEPTED if ok else CaseState.REJECTED, at, regulator.id, reason)
    return case


@dataclass(frozen=True)
class ImplementationResult:
    case_id: str
    target: str
    revision_before: int
    revision_after: int
    audit_seq: Optional[int]


def implement(
    case: RegulationCase,
    defs: DefinitionStore,
    roles: RoleStore,
    store: Optional[TraceStore] = None,
    at: int = 0,
    by: str = "regulator",
) -> ImplementationResult:
    """Apply the accepted action atomically.

    Process actions bump the definition revision by one; access grants bump
    the role store revision. A mutated definition failing validation leaves
    both stores untouched and raises :class:`MutationUnsound`.
    """
    _require(case, CaseState.ACCEPTED, "implement")
    action = case.proposed
    with defs.lock:
        if action is None or not action.resolves(defs, roles):
            case.notes.append("MutationUnsound: targets no longer resolve")
            raise MutationUnsound(f"{case.id}: targets of {action} do not resolve")

        if isinstance(action, ProcessAction):
            current = defs.get(action.process_id)
            mutated = action.mutate(current)
            faults = validate_definition(mutated, roles.roles)
            if faults:
                case.notes.append("MutationUnsound: " + "; ".join(map(str, faults)))
                raise MutationUnsound(f"{case.id}: mutated {current.id} is unsound", faults)
            before, after = current.revision, mutated.revision
            defs.replace(mutated)
            process_id: Optional[str] = current.id
        else:
            before = roles.revision
            roles.replace(action.granted(roles.get(action.role_id)))
            after = roles.revision
            process_id = None

        seq = None
        if store is not None:
            seq = store.collect(EngineEvent(
                kind=EventKind.DEFINITION_REVISED,
                process_id=process_id,
                revision=after,
                instance_id=None,
                activity_id=None,
                actor_id=by,
                object_id=None,
                at=at,
                detail=f"{case.id}:{type(action).__name__}:{action.target}",
            ))
        case._move(CaseState.IMPLEMENTED, at, by, action.target)
    return ImplementationResult(case.id, action.target, before, after, seq)


# --- cycle ------------------------------------------------------------------


@dataclass
class CaseReport:
    case_id: str
    indicator_id: str
    state: CaseState
    action: Optional[dict[str, Any]]
    target: Optional[str]
    revision_before: Optional[int]
    revision_after: Optional[int]
    reason: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "indicator_id": self.indicator_id,
            "state": self.state.value,
            "action": self.action,
            "target": self.target,
            "revision_before": self.revision_before,
            "revision_after": self.revision_after,
            "reason": self.reason,
        }


@dataclass
class CycleReport:
    at: int
    cases: list[CaseReport]
    mutations: int

    def to_dict(self) -> dict[str, Any]:
        return {"at": self.at, "mutations": self.mutations, "cases": [c.to_dict() for c in self.cases]}


VoteSource = Union[None, Mapping[str, bool], Callable[[RegulationCase], Mapping[str, bool]]]


def regulation_cycle(
    indicators: Iterable[Indicator],
    rules: Sequence[Rule],
    regulator: Regulator,
    defs: DefinitionStore,
    roles: RoleStore,
    store: TraceStore,
    observed: Optional[Iterable[TraceEvent]] = None,
    votes: VoteSource = None,
    at: int = 0,
    mutable: Optional[Iterable[str]] = None,
    id_prefix: str = "case",
) -> CycleReport:
    """One pass of detect, adapt, accept and implement over every breach.

    Cases run one after another, so a mutation made for an earlier case is
    visible when a later case checks whether its rule still resolves.
    Detection reads ``observed`` when given (e.g. a filtered view of the
    trace), otherwise the whole store.
    """
    mutable = None if mutable is None else frozenset(mutable)
    cases = detect(indicators, store if observed is None else observed, id_prefix)
    reports = []
    mutations = 0
    for case in cases:
        reason = ""
        result = None
        adapt(case, rules, defs, roles, at=at, by=regulator.id, mutable=mutable)
        if case.state is CaseState.ADAPTED:
            supplied = votes(case) if callable(votes) else votes
            accept(case, regulator, supplied, at=at)
        if case.state is CaseState.ACCEPTED:
            try:
                result = implement(case, defs, roles, store, at=at, by=regulator.id)
                mutations += 1
            except MutationUnsound as exc:
                reason = f"MutationUnsound: {exc}"
        if not reason and case.audit:
            reason = case.audit[-1].reason
        action = case.proposed
        reports.append(CaseReport(
            case_id=case.id,
            indicator_id=case.breach.indicator_id,
            state=case.state,
            action=action.to_dict() if action is not None else None,
            target=action.target if action is not None else None,
            revision_before=result.revision_before if result else None,
            revision_after=result.revision_after if result else None,
            reason=reason,
        ))
    return CycleReport(at, reports, mutations)
