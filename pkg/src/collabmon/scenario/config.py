"""Scenario configuration: typed model, JSON codec, schema and cross-checks."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import jsonschema

from collabmon.indicators import IndicatorKind, Metric, WeightFunction
from collabmon.metamodel import (
    AccessRight,
    Activity,
    Actor,
    BusinessObject,
    EventPattern,
    Indicator,
    Permission,
    ProcessDefinition,
    Regulator,
    Role,
    Rule,
    Threshold,
    Transition,
    Trigger,
    validate_definition,
)
from collabmon.observation import DEFAULT_SESSION_GAP
from collabmon.regulation import AcceptancePolicy, RegulationAction, action_from_dict

DEFAULT_CADENCE = 50


class ConfigInvalid(ValueError):
    def __init__(self, faults: Sequence[str]):
        self.faults = list(faults)
        super().__init__("; ".join(self.faults))


_ID = {"type": "string", "minLength": 1}
_IDS = {"type": "array", "items": _ID}
_NULLABLE_ID = {"type": ["string", "null"]}
_RIGHT = {
    "type": "object",
    "required": ["object_class", "permission"],
    "properties": {"object_class": _ID, "permission": {"enum": [p.value for p in Permission]}},
    "additionalProperties": False,
}
_FACTOR = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2, "maxItems": 2}

CONFIG_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ScenarioConfig",
    "type": "object",
    "required": ["name", "seed", "horizon", "roles", "actors", "processes", "workload"],
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": ["integer", "string"]},
        "horizon": {"type": "integer", "minimum": 0},
        "session_gap": {"type": "integer", "minimum": 0},
        "regulation_cadence": {"type": "integer", "minimum": 1},
        "collaborative_cutoff": {"type": "number"},
        "object_classes": _IDS,
        "roles": {"type": "array", "items": {
            "type": "object", "required": ["id"],
            "properties": {"id": _ID, "name": {"type": "string"},
                           "rights": {"type": "array", "items": _RIGHT}},
        }},
        "actors": {"type": "array", "items": {
            "type": "object", "required": ["id", "roles"],
            "properties": {"id": _ID, "name": {"type": "string"}, "roles": {**_IDS, "minItems": 1},
                           "external": {"type": "boolean"}},
        }},
        "objects": {"type": "array", "items": {
            "type": "object", "required": ["id", "object_class"],
            "properties": {"id": _ID, "object_class": _ID, "version": {"type": "integer", "minimum": 0},
                           "state": {"type": "string"}},
        }},
        "processes": {"type": "array", "items": {
            "type": "object", "required": ["id", "structuring", "activities"],
            "properties": {
                "id": _ID,
                "name": {"type": "string"},
                "structuring": {"enum": ["Mechanistic", "Systemic", "Emerging"]},
                "category": {"enum": ["Administrative", "Production"]},
                "variability": {"enum": ["Permanent", "Varying"]},
                "revision": {"type": "integer", "minimum": 0},
                "activities": {"type": "array", "items": {
                    "type": "object", "required": ["id", "kind", "required_role"],
                    "properties": {
                        "id": _ID, "name": {"type": "string"},
                        "kind": {"enum": ["Task", "Validation", "ChangeRequest", "InformationSearch", "Exchange"]},
                        "required_role": _ID, "inputs": _IDS, "outputs": _IDS,
                        "expected_duration": {"type": "integer"},
                        "channel": {"type": "string"}, "recipients": _IDS,
                    },
                }},
                "transitions": {"type": "array", "items": {
                    "type": "object", "required": ["from", "to"],
                    "properties": {"from": _ID, "to": _ID, "guard": _NULLABLE_ID},
                }},
                "triggers": {"type": "array", "items": {
                    "type": "object", "required": ["event", "activity"],
                    "properties": {"event": _ID, "object_class": _NULLABLE_ID, "activity": _ID},
                }},
                "entries": _IDS,
            },
        }},
        "weights": {"type": "array", "items": {
            "type": "object", "required": ["criterion", "weight"],
            "properties": {"criterion": _ID, "weight": {"type": "number", "minimum": 0}},
        }},
        "indicators": {"type": "array", "items": {
            "type": "object", "required": ["id", "objective", "metric", "threshold"],
            "properties": {
                "id": _ID, "objective": {"type": "string", "minLength": 1},
                "metric": {"enum": [m.value for m in Metric]},
                "scope": _NULLABLE_ID,
                "sub_windows": {"type": "integer", "minimum": 1},
                "window": {"type": ["integer", "null"], "minimum": 0},
                "threshold": {
                    "type": "object", "required": ["value", "direction"],
                    "properties": {"value": {"type": "number"}, "direction": {"enum": ["AtLeast", "AtMost"]}},
                },
            },
        }},
        "rules": {"type": "array", "items": {
            "type": "object", "required": ["id", "indicator_id", "action"],
            "properties": {"id": _ID, "indicator_id": _ID, "priority": {"type": "integer"},
                           "action": {"type": "object", "required": ["type"]}},
        }},
        "regulator": {
            "type": "object", "required": ["id"],
            "properties": {
                "id": _ID, "kind": {"enum": ["Human", "Automated"]},
                "acceptance": {"type": "object", "properties": {
                    "kind": {"enum": ["Auto", "Quorum", "Unanimous"]},
                    "quorum": {"type": ["number", "null"]},
                    "stakeholders": _IDS,
                }},
            },
        },
        "votes": {
            "type": "object",
            "properties": {"mode": {"enum": ["fixed", "random"]},
                           "values": {"type": "object", "additionalProperties": {"type": "boolean"}},
                           "p_yes": {"type": "number", "minimum": 0, "maximum": 1}},
        },
        "workload": {"type": "array", "items": {
            "type": "object", "required": ["process_id", "at"],
            "properties": {"process_id": _ID, "at": {"type": "integer", "minimum": 0},
                           "bindings": {"type": "object", "additionalProperties": _ID},
                           "instance_id": _ID},
        }},
        "durations": {"type": "object", "additionalProperties": _FACTOR},
        "monitored": _IDS,
    },
}


@dataclass(frozen=True)
class Arrival:
    process_id: str
    at: int
    bindings: Mapping[str, str] = field(default_factory=dict)
    instance_id: Optional[str] = None


@dataclass
class ScenarioConfig:
    name: str
    seed: Union[int, str]
    horizon: int
    roles: list[Role]
    actors: list[Actor]
    processes: list[ProcessDefinition]
    workload: list[Arrival]
    objects: list[BusinessObject] = field(default_factory=list)
    object_classes: list[str] = field(default_factory=list)
    weights: Optional[WeightFunction] = None
    collaborative_cutoff: float = 0.0
    indicators: list[Indicator] = field(default_factory=list)
    rules: list[Rule] = field(default_factory=list)
    regulator: Optional[Regulator] = None
    votes: dict[str, Any] = field(default_factory=dict)
    durations: dict[str, tuple[float, float]] = field(default_factory=dict)
    monitored: list[str] = field(default_factory=list)
    session_gap: int = DEFAULT_SESSION_GAP
    regulation_cadence: int = DEFAULT_CADENCE

    @property
    def role_table(self) -> dict[str, Role]:
        return {r.id: r for r in self.roles}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScenarioConfig":
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigInvalid([f"schema: {where}: {exc.message}"]) from exc
        try:
            return cls._parse(data)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigInvalid([f"parse: {exc}"]) from exc

    @classmethod
    def _parse(cls, data: Mapping[str, Any]) -> "ScenarioConfig":
        regulator = None
        if "regulator" in data:
            reg = data["regulator"]
            acc = reg.get("acceptance", {})
            regulator = Regulator(
                reg["id"], reg.get("kind", "Automated"),
                AcceptancePolicy(acc.get("kind", "Auto"), acc.get("quorum"), tuple(acc.get("stakeholders", ()))),
            )
        weights = None
        if data.get("weights"):
            weights = WeightFunction(tuple((w["criterion"], w["weight"]) for w in data["weights"]))
        return cls(
            name=data["name"],
            seed=data["seed"],
            horizon=data["horizon"],
            roles=[role_from_dict(r) for r in data["roles"]],
            actors=[Actor(a["id"], a.get("name", a["id"]), frozenset(a["roles"]), a.get("external", False))
                    for a in data["actors"]],
            processes=[definition_from_dict(p) for p in data["processes"]],
            workload=[Arrival(w["process_id"], w["at"], dict(w.get("bindings", {})), w.get("instance_id"))
                      for w in data["workload"]],
            objects=[BusinessObject(o["id"], o["object_class"], o.get("version", 0), o.get("state", "draft"))
                     for o in data.get("objects", [])],
            object_classes=list(data.get("object_classes", [])),
            weights=weights,
            collaborative_cutoff=data.get("collaborative_cutoff", 0.0),
            indicators=[indicator_from_dict(i) for i in data.get("indicators", [])],
            rules=[Rule(r["id"], r["indicator_id"], action_from_dict(r["action"]), r.get("priority", 0))
                   for r in data.get("rules", [])],
            regulator=regulator,
            votes=dict(data.get("votes", {})),
            durations={k: (float(v[0]), float(v[1])) for k, v in data.get("durations", {}).items()},
            monitored=list(data.get("monitored", [])),
            session_gap=data.get("session_gap", DEFAULT_SESSION_GAP),
            regulation_cadence=data.get("regulation_cadence", DEFAULT_CADENCE),
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "seed": self.seed,
            "horizon": self.horizon,
            "session_gap": self.session_gap,
            "regulation_cadence": self.regulation_cadence,
            "collaborative_cutoff": self.collaborative_cutoff,
            "object_classes": list(self.object_classes),
            "roles": [role_to_dict(r) for r in self.roles],
            "actors": [{"id": a.id, "name": a.name, "roles": sorted(a.role_ids), "external": a.external}
                       for a in self.actors],
            "objects": [{"id": o.id, "object_class": o.object_class, "version": o.version, "state": o.state}
                        for o in self.objects],
            "processes": [definition_to_dict(p) for p in self.processes],
            "indicators": [indicator_to_dict(i) for i in self.indicators],
            "rules": [{"id": r.id, "indicator_id": r.indicator_id, "priority": r.priority,
                       "action": r.action.to_dict()} for r in self.rules],
            "workload": [_arrival_to_dict(w) for w in self.workload],
            "durations": {k: list(v) for k, v in sorted(self.durations.items())},
            "monitored": list(self.monitored),
        }
        if self.weights is not None:
            out["weights"] = [{"criterion": c, "weight": w} for c, w in self.weights.weights]
        if self.regulator is not None:
            pol = self.regulator.acceptance_policy
            out["regulator"] = {
                "id": self.regulator.id,
                "kind": self.regulator.kind.value,
                "acceptance": {"kind": pol.kind.value, "quorum": pol.quorum,
                               "stakeholders": list(pol.stakeholders)},
            }
        if self.votes:
            out["votes"] = dict(self.votes)
        return out


def _arrival_to_dict(w: Arrival) -> dict[str, Any]:
    row: dict[str, Any] = {"process_id": w.process_id, "at": w.at, "bindings": dict(sorted(w.bindings.items()))}
    if w.instance_id is not None:
        row["instance_id"] = w.instance_id
    return row


# --- element codecs ---------------------------------------------------------


def role_from_dict(data: Mapping[str, Any]) -> Role:
    rights = frozenset(AccessRight(r["object_class"], Permission(r["permission"])) for r in data.get("rights", []))
    return Role(data["id"], data.get("name", data["id"]), rights)


def role_to_dict(role: Role) -> dict[str, Any]:
    return {
        "id": role.id,
        "name": role.name,
        "rights": [{"object_class": r.object_class, "permission": r.permission.value}
                   for r in sorted(role.rights)],
    }


def definition_from_dict(data: Mapping[str, Any]) -> ProcessDefinition:
    activities = [
        Activity(
            id=a["id"], name=a.get("name", a["id"]), kind=a["kind"], required_role=a["required_role"],
            inputs=frozenset(a.get("inputs", ())), outputs=frozenset(a.get("outputs", ())),
            expected_duration=a.get("expected_duration", 1), channel=a.get("channel", ""),
            recipients=tuple(a.get("recipients", ())),
        )
        for a in data["activities"]
    ]
    return ProcessDefinition(
        id=data["id"],
        name=data.get("name", data["id"]),
        structuring=data["structuring"],
        category=data.get("category", "Production"),
        variability=data.get("variability", "Permanent"),
        activities=activities,
        transitions=[Transition(t["from"], t["to"], t.get("guard")) for t in data.get("transitions", [])],
        triggers=[Trigger(EventPattern(t["event"], t.get("object_class")), t["activity"])
                  for t in data.get("triggers", [])],
        entries=list(data.get("entries", [])),
        revision=data.get("revision", 0),
    )


def definition_to_dict(d: ProcessDefinition) -> dict[str, Any]:
    return {
        "id": d.id,
        "name": d.name,
        "structuring": d.structuring.value,
        "category": d.category.value,
        "variability": d.variability.value,
        "revision": d.revision,
        "activities": [
            {"id": a.id, "name": a.name, "kind": a.kind.value, "required_role": a.required_role,
             "inputs": sorted(a.inputs), "outputs": sorted(a.outputs),
             "expected_duration": a.expected_duration, "channel": a.channel,
             "recipients": list(a.recipients)}
            for a in d.activities
        ],
        "transitions": [{"from": t.source, "to": t.target, "guard": t.guard} for t in d.transitions],
        "triggers": [{"event": t.pattern.action, "object_class": t.pattern.object_class, "activity": t.activity}
                     for t in d.triggers],
        "entries": list(d.entries),
    }


def indicator_from_dict(data: Mapping[str, Any]) -> Indicator:
    kind = IndicatorKind(Metric(data["metric"]), data.get("scope"), data.get("sub_windows", 10))
    thr = data["threshold"]
    return Indicator(data["id"], data["objective"], kind, Threshold(float(thr["value"]), thr["direction"]),
                     data.get("window"))


def indicator_to_dict(ind: Indicator) -> dict[str, Any]:
    return {
        "id": ind.id,
        "objective": ind.objective,
        "metric": ind.calculation.metric.value,
        "scope": ind.calculation.scope,
        "sub_windows": ind.calculation.sub_windows,
        "window": ind.window,
        "threshold": {"value": ind.threshold.value, "direction": ind.threshold.direction.value},
    }


# --- cross-reference checks -------------------------------------------------


def _duplicates(ids: Sequence[str]) -> list[str]:
    seen, dup = set(), []
    for i in ids:
        if i in seen and i not in dup:
            dup.append(i)
        seen.add(i)
    return dup


def config_faults(config: ScenarioConfig) -> list[str]:
    """Every dangling reference and definition fault in ``config``."""
    faults: list[str] = []
    roles = config.role_table
    actor_ids = {a.id for a in config.actors}
    process_ids = {p.id for p in config.processes}
    objects = {o.id: o for o in config.objects}
    classes = set(config.object_classes)

    for label, ids in (("role", [r.id for r in config.roles]), ("actor", [a.id for a in config.actors]),
                       ("process", [p.id for p in config.processes]), ("object", [o.id for o in config.objects]),
                       ("indicator", [i.id for i in config.indicators]), ("rule", [r.id for r in config.rules])):
        faults.extend(f"duplicate {label} id {d!r}" for d in _duplicates(ids))

    for actor in config.actors:
        for role_id in sorted(actor.role_ids):
            if role_id not in roles:
                faults.append(f"actor {actor.id!r}: unknown role {role_id!r}")

    if classes:
        used = {(f"role {r.id!r}", right.object_class) for r in config.roles for right in r.rights}
        used |= {(f"object {o.id!r}", o.object_class) for o in config.objects}
        used |= {(f"activity {p.id}/{a.id}", c) for p in config.processes for a in p.activities
                 for c in a.inputs | a.outputs}
        for where, cls in sorted(used):
            if cls not in classes:
                faults.append(f"{where}: undeclared object class {cls!r}")

    for proc in config.processes:
        for fault in validate_definition(proc, roles):
            faults.append(f"process {proc.id!r}: {fault}")

    for n, arrival in enumerate(config.workload):
        if arrival.process_id not in process_ids:
            faults.append(f"workload[{n}]: unknown process {arrival.process_id!r}")
        else:
            proc = next(p for p in config.processes if p.id == arrival.process_id)
            for start in proc.start_activities():
                if proc.has_activity(start):
                    for cls in sorted(proc.activity(start).inputs - set(arrival.bindings)):
                        faults.append(f"workload[{n}]: start activity {start!r} needs a {cls} binding")
        for cls, obj_id in sorted(arrival.bindings.items()):
            if obj_id not in objects:
                faults.append(f"workload[{n}]: unknown object {obj_id!r}")
            elif objects[obj_id].object_class != cls:
                faults.append(f"workload[{n}]: object {obj_id!r} is a {objects[obj_id].object_class}, bound as {cls}")

    indicator_ids = {i.id for i in config.indicators}
    priorities: set[tuple[str, int]] = set()
    for rule in config.rules:
        if rule.indicator_id not in indicator_ids:
            faults.append(f"rule {rule.id!r}: unknown indicator {rule.indicator_id!r}")
        key = (rule.indicator_id, rule.priority)
        if key in priorities:
            faults.append(f"rule {rule.id!r}: priority {rule.priority} already used for {rule.indicator_id!r}")
        priorities.add(key)
        faults.extend(f"rule {rule.id!r}: {msg}" for msg in _action_faults(rule.action, config))

    if config.rules and config.regulator is None:
        faults.append("rules declared without a regulator")
    if config.regulator is not None:
        for s in config.regulator.acceptance_policy.stakeholders:
            if s not in actor_ids:
                faults.append(f"regulator {config.regulator.id!r}: unknown stakeholder {s!r}")
    for pid in config.monitored:
        if pid not in process_ids:
            faults.append(f"monitored: unknown process {pid!r}")
    return faults


def _action_faults(action: RegulationAction, config: ScenarioConfig) -> list[str]:
    # activity targets may legitimately be gone after earlier regulation;
    # adaptation skips rules that no longer resolve
    out = []
    pid = action.process
    if pid is not None and pid not in {p.id for p in config.processes}:
        out.append(f"unknown process {pid!r}")
    role_id = getattr(action, "role_id", None)
    if role_id is not None and role_id not in config.role_table:
        out.append(f"unknown role {role_id!r}")
    return out


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    """Parse a scenario file. ``json.JSONDecodeError`` and ``OSError`` propagate."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return ScenarioConfig.from_dict(data)
