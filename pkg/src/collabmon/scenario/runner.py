"""Executes a scenario: workload, probes, indicators and regulation cadence."""
from __future__ import annotations

import copy
import heapq
import logging
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

from collabmon.engine import (
    Engine,
    EngineError,
    EventKind,
    ExecutionPolicy,
    ProcessInstance,
)
from collabmon.indicators import delta_c, report, select_collaborative_objects
from collabmon.metamodel import ProcessDefinition, Role
from collabmon.observation import TraceEvent, TraceStore, compute_all_stats, structure
from collabmon.regulation import (
    CycleReport,
    DefinitionStore,
    RegulationCase,
    RoleStore,
    regulation_cycle,
)
from collabmon.scenario.config import ConfigInvalid, ScenarioConfig, config_faults

logger = logging.getLogger(__name__)

COMPARISON_COLUMNS = (
    "process_id", "group", "revision_initial", "revision_final", "instances", "completed",
    "events", "validation_events", "validation_tasks", "makespan_mean", "makespan_max",
)


@dataclass
class RunReport:
    config: ScenarioConfig
    store: TraceStore
    event_counts: dict[str, int]
    instances: dict[str, Any]
    collaborative: dict[str, Any]
    indicators: list[dict[str, Any]]
    regulation: list[CycleReport]
    processes: list[dict[str, Any]]
    final_definitions: list[ProcessDefinition] = field(repr=False, default_factory=list)
    final_roles: list[Role] = field(repr=False, default_factory=list)

    @property
    def breaches(self) -> list[str]:
        return [row["id"] for row in self.indicators if row["breach"]]

    @property
    def mutations(self) -> int:
        return sum(c.mutations for c in self.regulation)

    def process_row(self, process_id: str) -> dict[str, Any]:
        return next(r for r in self.processes if r["process_id"] == process_id)

    def comparison(self) -> dict[str, dict[str, Any]]:
        groups: dict[str, dict[str, Any]] = {}
        for row in self.processes:
            g = groups.setdefault(row["group"], {"processes": 0, "instances": 0, "events": 0,
                                                 "validation_events": 0, "mutated_processes": 0})
            g["processes"] += 1
            g["instances"] += row["instances"]
            g["events"] += row["events"]
            g["validation_events"] += row["validation_events"]
            g["mutated_processes"] += int(row["revision_final"] != row["revision_initial"])
        return dict(sorted(groups.items()))

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.config.name,
            "seed": self.config.seed,
            "horizon": self.config.horizon,
            "trace": {"events": len(self.store), "by_kind": self.event_counts},
            "instances": self.instances,
            "collaborative": self.collaborative,
            "indicators": self.indicators,
            "regulation": [c.to_dict() for c in self.regulation],
            "mutations": self.mutations,
            "processes": self.processes,
            "comparison": self.comparison(),
        }


def monitored_events(events: Iterable[TraceEvent], monitored: Iterable[str]) -> list[TraceEvent]:
    """Events belonging to monitored processes; the control group is invisible to indicators."""
    keep = set(monitored)
    return [ev for ev in events if ev.event.process_id in keep]


def _vote_source(config: ScenarioConfig):
    mode = config.votes.get("mode", "fixed")
    if mode == "fixed":
        values = {k: bool(v) for k, v in config.votes.get("values", {}).items()}
        return lambda case: values
    p_yes = float(config.votes.get("p_yes", 0.5))
    stakeholders = config.regulator.acceptance_policy.stakeholders if config.regulator else ()

    def draw(case: RegulationCase) -> dict[str, bool]:
        rng = random.Random(f"{config.seed}:votes:{case.id}")
        return {s: rng.random() < p_yes for s in stakeholders}

    return draw


def run(config: ScenarioConfig) -> RunReport:
    """Run the workload to the horizon with probes and the regulation loop.

    Instances advance one activity at a time, earliest clock first (ties by
    arrival order); arrivals due at or before that clock are instantiated
    first, on the definition revision current at that moment. Each instance
    draws actors and durations from its own seeded generator, so instances
    of untouched processes behave identically whatever happens elsewhere.
    """
    faults = config_faults(config)
    if faults:
        raise ConfigInvalid(faults)

    store = TraceStore()
    defs = DefinitionStore(copy.deepcopy(config.processes))
    roles = RoleStore(copy.deepcopy(config.roles))
    objects = {o.id: replace(o) for o in config.objects}
    engine = Engine(roles.roles, objects, sink=store.collect)
    policy = ExecutionPolicy(config.actors, config.durations, config.durations.get("default", (1.0, 1.0)))
    initial_revisions = {p.id: p.revision for p in config.processes}
    monitored = sorted(set(config.monitored))
    regulate = bool(config.rules) and config.regulator is not None and bool(monitored)
    votes = _vote_source(config)

    arrivals = sorted(
        (a for a in enumerate(config.workload) if a[1].at <= config.horizon),
        key=lambda a: (a[1].at, a[0]),
    )
    queue: list[tuple[int, int, str]] = []
    live: dict[str, ProcessInstance] = {}
    rngs: dict[str, random.Random] = {}
    instance_process: dict[str, str] = {}
    blocked: dict[str, str] = {}
    truncated: list[str] = []
    cycles: list[CycleReport] = []
    next_cycle = config.regulation_cadence
    pointer = 0

    while pointer < len(arrivals) or queue:
        if pointer < len(arrivals) and (not queue or arrivals[pointer][1].at <= queue[0][0]):
            order, arrival = arrivals[pointer]
            pointer += 1
            inst_id = arrival.instance_id or f"{arrival.process_id}#{order + 1:03d}"
            instance_process[inst_id] = arrival.process_id
            try:
                instance = engine.instantiate(defs.get(arrival.process_id), arrival.bindings, arrival.at, inst_id)
            except EngineError as exc:
                blocked[inst_id] = str(exc)
                continue
            live[inst_id] = instance
            rngs[inst_id] = random.Random(f"{config.seed}:{inst_id}")
            heapq.heappush(queue, (instance.clock, order, inst_id))
        else:
            clock, order, inst_id = heapq.heappop(queue)
            instance = live[inst_id]
            if clock > config.horizon:
                truncated.append(inst_id)
                continue
            try:
                engine.step(instance, policy, rngs[inst_id])
            except EngineError as exc:
                blocked[inst_id] = str(exc)
                logger.warning("instance %s blocked: %s", inst_id, exc)
                continue
            if instance.enabled():
                heapq.heappush(queue, (instance.clock, order, inst_id))
            elif not instance.done:
                blocked[inst_id] = "stalled: " + ", ".join(instance.unfinished())

        if regulate and len(store) >= next_cycle:
            now = max((i.clock for i in live.values()), default=0)
            cycle = regulation_cycle(
                config.indicators, config.rules, config.regulator, defs, roles, store,
                observed=monitored_events(store.snapshot(), monitored),
                votes=votes, at=now, mutable=monitored, id_prefix=f"c{len(cycles) + 1}",
            )
            cycles.append(cycle)
            next_cycle = len(store) + config.regulation_cadence

    structure(store, config.session_gap)
    events = store.snapshot()

    stats = compute_all_stats(events, objects)
    collaborative: dict[str, Any] = {"cutoff": config.collaborative_cutoff}
    if config.weights is not None:
        collaborative["weights"] = dict(config.weights.weights)
        collaborative["delta_c"] = {oid: delta_c(config.weights, s) for oid, s in stats.items()}
        collaborative["selected"] = select_collaborative_objects(config.weights, stats, config.collaborative_cutoff)
    collaborative["stats"] = {oid: s.criteria for oid, s in stats.items()}

    indicator_rows = [r.to_dict() for r in report(config.indicators, monitored_events(events, monitored))]

    completed = sorted(i for i, inst in live.items() if inst.done)
    return RunReport(
        config=config,
        store=store,
        event_counts=dict(sorted(Counter(ev.event.kind.value for ev in events).items())),
        instances={
            "arrivals": len(config.workload),
            "instantiated": len(instance_process),
            "completed": len(completed),
            "blocked": dict(sorted(blocked.items())),
            "truncated": sorted(truncated),
        },
        collaborative=collaborative,
        indicators=indicator_rows,
        regulation=cycles,
        processes=_process_rows(config, events, defs, initial_revisions, instance_process, set(monitored)),
        final_definitions=defs.current(),
        final_roles=[roles.roles[k] for k in sorted(roles.roles)],
    )


def _process_rows(config, events, defs, initial_revisions, instance_process, monitored) -> list[dict[str, Any]]:
    per_process: dict[str, list[TraceEvent]] = defaultdict(list)
    for ev in events:
        if ev.event.process_id is not None:
            per_process[ev.event.process_id].append(ev)
    rows = []
    for pid in sorted(initial_revisions):
        pev = [ev.event for ev in per_process[pid]]
        first_enabled: dict[str, int] = {}
        last_completed: dict[str, int] = {}
        enabled: dict[str, set[str]] = defaultdict(set)
        done: dict[str, set[str]] = defaultdict(set)
        for e in pev:
            if e.instance_id is None:
                continue
            if e.kind is EventKind.ACTIVITY_ENABLED:
                first_enabled.setdefault(e.instance_id, e.at)
                enabled[e.instance_id].add(e.activity_id)
            elif e.kind is EventKind.ACTIVITY_COMPLETED:
                last_completed[e.instance_id] = e.at
                done[e.instance_id].add(e.activity_id)
        instances = sorted(i for i, p in instance_process.items() if p == pid)
        # finished: every enabled activity also completed
        finished = [i for i in instances if i in last_completed and enabled[i] <= done[i]]
        spans = [last_completed[i] - first_enabled[i] for i in finished]
        validations = [e for e in pev if e.kind is EventKind.VALIDATION_REQUESTED]
        rows.append({
            "process_id": pid,
            "group": "monitored" if pid in monitored else "control",
            "revision_initial": initial_revisions[pid],
            "revision_final": defs.get(pid).revision,
            "instances": len(instances),
            "completed": len(finished),
            "events": len(pev),
            "validation_events": len(validations),
            "validation_tasks": len({(e.instance_id, e.activity_id) for e in validations}),
            "makespan_mean": round(sum(spans) / len(spans), 6) if spans else 0.0,
            "makespan_max": max(spans, default=0),
        })
    return rows


def run_closed_loop(config: ScenarioConfig) -> tuple[RunReport, RunReport]:
    """Run the workload, then run it again on the definitions the first pass produced."""
    first = run(config)
    second_config = replace(config, processes=list(first.final_definitions), roles=list(first.final_roles))
    return first, run(second_config)
