"""Builders and brute-force oracles shared by the test modules.

The oracles here are written independently of the library: plain loops over
raw event fields, no reuse of library helpers beyond the data types.
"""
from __future__ import annotations

import random
from collections import defaultdict
from typing import Optional

from collabmon.engine import EngineEvent, EventKind
from collabmon.metamodel import (
    AccessRight,
    Activity,
    ActivityKind,
    Actor,
    Permission,
    ProcessDefinition,
    Role,
    Structuring,
    Transition,
)
from collabmon.observation import TraceEvent, TraceStore

DOC = "Document"
CAD = "CADModel"

ALL_RIGHTS = frozenset(AccessRight(c, p) for c in (DOC, CAD) for p in Permission)


def worker_role(role_id: str = "worker") -> Role:
    return Role(role_id, role_id, ALL_RIGHTS)


def roles_table(*roles: Role) -> dict[str, Role]:
    roles = roles or (worker_role(),)
    return {r.id: r for r in roles}


def actor(actor_id: str = "ann", *role_ids: str) -> Actor:
    return Actor(actor_id, actor_id, frozenset(role_ids or ("worker",)))


def task(act_id: str, kind: ActivityKind = ActivityKind.TASK, role: str = "worker",
         inputs=(), outputs=(DOC,), expected: int = 3, **kw) -> Activity:
    return Activity(act_id, act_id, kind, role, frozenset(inputs), frozenset(outputs), expected, **kw)


def mechanistic(def_id: str, activities, edges, revision: int = 0) -> ProcessDefinition:
    return ProcessDefinition(
        def_id, def_id, Structuring.MECHANISTIC,
        activities=tuple(activities),
        transitions=tuple(Transition(a, b) for a, b in edges),
        revision=revision,
    )


def chain(def_id: str = "p", ids=("a1", "a2", "a3"), kinds=None) -> ProcessDefinition:
    kinds = kinds or {}
    acts = [task(i, kinds.get(i, ActivityKind.TASK)) for i in ids]
    return mechanistic(def_id, acts, list(zip(ids, ids[1:])))


def random_dag(rng: random.Random, n: int, def_id: str = "dag", p_edge: float = 0.3,
               p_validation: float = 0.3) -> ProcessDefinition:
    """Random weakly connected DAG over ``n`` activities, edges low id -> high id."""
    ids = [f"a{i:02d}" for i in range(n)]
    edges = set()
    for j in range(1, n):
        # every node gets one earlier parent, which keeps the graph connected
        edges.add((ids[rng.randrange(j)], ids[j]))
        for i in range(j):
            if rng.random() < p_edge:
                edges.add((ids[i], ids[j]))
    acts = [
        task(i, ActivityKind.VALIDATION if rng.random() < p_validation else ActivityKind.TASK,
             expected=rng.randint(1, 5))
        for i in ids
    ]
    return mechanistic(def_id, acts, sorted(edges))


# --- random traces -----------------------------------------------------------

KINDS = list(EventKind)


def random_trace(rng: random.Random, n_events: int, objects=("o1", "o2", "o3", "o4"),
                 actors=("u1", "u2", "u3", "u4", "u5"), activities=("t1", "t2", "t3", "s1"),
                 processes=("p1", "p2"), instances=("i1", "i2", "i3")) -> TraceStore:
    """Arbitrary event soup with non-decreasing timestamps.

    Not a valid engine run; indicator and statistics definitions must hold
    on any sequence of well-typed events.
    """
    store = TraceStore()
    at = 0
    for _ in range(n_events):
        at += rng.choice((0, 0, 1, 1, 2, 5))
        kind = rng.choice(KINDS)
        store.collect(EngineEvent(
            kind=kind,
            process_id=rng.choice(processes),
            revision=0,
            instance_id=rng.choice(instances),
            activity_id=rng.choice(activities),
            actor_id=None if kind is EventKind.ACTIVITY_ENABLED else rng.choice(actors),
            object_id=rng.choice(objects + (None,)),
            at=at,
            version=None,
            detail=rng.choice(("email", "portal", None)) if kind is EventKind.EXCHANGE_PERFORMED else None,
        ))
    return store


# --- brute-force oracles -----------------------------------------------------


def oracle_count(events: list[TraceEvent], kind: str, field: str, scope: Optional[str],
                 lo: Optional[int] = None, hi: Optional[int] = None) -> int:
    n = 0
    for ev in events:
        e = ev.event
        if lo is not None and e.at < lo:
            continue
        if hi is not None and e.at > hi:
            continue
        if e.kind.value != kind:
            continue
        if scope is not None and getattr(e, field) != scope:
            continue
        n += 1
    return n


def oracle_time_on_task(events: list[TraceEvent], activity: Optional[str],
                        lo: Optional[int] = None, hi: Optional[int] = None) -> int:
    started: dict = {}
    finished: dict = {}
    for ev in events:
        e = ev.event
        if (lo is not None and e.at < lo) or (hi is not None and e.at > hi):
            continue
        key = (e.instance_id, e.activity_id)
        if e.kind.value == "ActivityStarted" and key not in started:
            started[key] = e.at
        if e.kind.value == "ActivityCompleted" and key in started and key not in finished:
            finished[key] = e.at
    return sum(finished[k] - started[k] for k in finished if activity is None or k[1] == activity)


def oracle_info_search_time(events: list[TraceEvent], object_id: str,
                            lo: Optional[int] = None, hi: Optional[int] = None) -> int:
    inside = [ev for ev in events if (lo is None or ev.event.at >= lo) and (hi is None or ev.event.at <= hi)]
    searching = set()
    for ev in inside:
        if ev.event.kind.value == "SearchPerformed" and ev.event.object_id == object_id:
            searching.add((ev.event.instance_id, ev.event.activity_id))
    started: dict = {}
    total = 0
    closed = set()
    for ev in inside:
        e = ev.event
        key = (e.instance_id, e.activity_id)
        if e.kind.value == "ActivityStarted" and key not in started:
            started[key] = e.at
        elif e.kind.value == "ActivityCompleted" and key in started and key not in closed:
            closed.add(key)
            if key in searching:
                total += e.at - started[key]
    return total


def oracle_stats(events: list[TraceEvent]) -> dict[str, tuple[int, int, int]]:
    """(modifications, accesses by 3rd+ actor, output flows) per object, one pass."""
    mods: dict = defaultdict(int)
    multi: dict = defaultdict(int)
    seen_actors: dict = defaultdict(list)
    modified_by_execution: dict = defaultdict(set)
    flows: dict = defaultdict(int)
    completed = set()
    objects = set()
    for ev in events:
        e = ev.event
        if e.object_id is not None:
            objects.add(e.object_id)
        if e.kind.value in ("ObjectAccessed", "ObjectModified") and e.object_id is not None:
            order = seen_actors[e.object_id]
            if e.actor_id not in order:
                order.append(e.actor_id)
            if order.index(e.actor_id) >= 2:
                multi[e.object_id] += 1
        if e.kind.value == "ObjectModified" and e.object_id is not None:
            mods[e.object_id] += 1
            modified_by_execution[(e.instance_id, e.activity_id)].add(e.object_id)
    for ev in events:
        e = ev.event
        key = (e.instance_id, e.activity_id)
        if e.kind.value == "ActivityCompleted" and key not in completed:
            completed.add(key)
            for oid in modified_by_execution[key]:
                flows[oid] += 1
    return {o: (mods[o], multi[o], flows[o]) for o in objects}
