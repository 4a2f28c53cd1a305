"""Collaborative weight, object selection and monitoring indicators.

The weight of an object is the weighted sum of its usage criteria; objects
whose weight reaches a cutoff are the ones worth analysing. Indicators are
threshold-bearing metrics computed over a trace; a crossed threshold yields
a :class:`Breach` that feeds the regulation loop.
"""
from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from collabmon.engine import EventKind
from collabmon.metamodel import Direction, Indicator
from collabmon.observation import ObjectUsageStats, TraceEvent

logger = logging.getLogger(__name__)


# --- collaborative weight ---------------------------------------------------


@dataclass(frozen=True)
class WeightFunction:
    weights: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple((str(c), w) for c, w in self.weights))
        if not self.weights:
            raise ValueError("a weight function needs at least one criterion")
        for criterion, alpha in self.weights:
            if not math.isfinite(alpha) or alpha < 0:
                raise ValueError(f"weight for {criterion!r} must be finite and >= 0, got {alpha}")

    @classmethod
    def of(cls, weights: Mapping[str, float]) -> "WeightFunction":
        return cls(tuple(weights.items()))

    def scaled(self, factor: float) -> "WeightFunction":
        return WeightFunction(tuple((c, w * factor) for c, w in self.weights))


def _criteria(stats: Union[ObjectUsageStats, Mapping[str, float]]) -> Mapping[str, float]:
    return stats.criteria if isinstance(stats, ObjectUsageStats) else stats


def delta_c(wf: WeightFunction, stats: Union[ObjectUsageStats, Mapping[str, float]]) -> float:
    """Collaborative weight: sum of weight times criterion value.

    Criteria absent from ``stats`` count as zero.
    """
    values = _criteria(stats)
    total = 0
    for criterion, alpha in wf.weights:
        total += alpha * values.get(criterion, 0)
    return total


def select_collaborative_objects(
    wf: WeightFunction,
    all_stats: Union[Mapping[str, Any], Iterable[ObjectUsageStats]],
    cutoff: float,
) -> list[str]:
    if not math.isfinite(cutoff):
        raise ValueError("cutoff must be finite")
    if isinstance(all_stats, Mapping):
        items = all_stats.items()
    else:
        items = ((s.object_id, s) for s in all_stats)
    return sorted(oid for oid, stats in items if delta_c(wf, stats) >= cutoff)


# --- indicator catalogue ----------------------------------------------------


class Metric(str, Enum):
    CHANGE_REQUESTS_PER_OBJECT = "ChangeRequestsPerObject"
    VALIDATION_REQUESTS_PER_OBJECT = "ValidationRequestsPerObject"
    TIME_ON_TASK = "TimeOnTask"
    PROCESS_MODIFICATION_COUNT = "ProcessModificationCount"
    MISSED_DEADLINE_COUNT = "MissedDeadlineCount"
    INFO_SEARCH_TIME = "InfoSearchTime"
    EXCHANGE_TYPE_PROFILE = "ExchangeTypeProfile"
    USER_COUNT = "UserCount"
    EXPLOITATION_ABILITY = "ExploitationAbility"
    USE_STABILITY = "UseStability"


SCOPE_KIND = {
    Metric.CHANGE_REQUESTS_PER_OBJECT: "object",
    Metric.VALIDATION_REQUESTS_PER_OBJECT: "object",
    Metric.INFO_SEARCH_TIME: "object",
    Metric.TIME_ON_TASK: "activity",
    Metric.MISSED_DEADLINE_COUNT: "activity",
    Metric.PROCESS_MODIFICATION_COUNT: "process",
    Metric.EXCHANGE_TYPE_PROFILE: "global",
    Metric.USER_COUNT: "global",
    Metric.EXPLOITATION_ABILITY: "global",
    Metric.USE_STABILITY: "global",
}

COUNTING_METRICS = frozenset({
    Metric.CHANGE_REQUESTS_PER_OBJECT,
    Metric.VALIDATION_REQUESTS_PER_OBJECT,
    Metric.PROCESS_MODIFICATION_COUNT,
    Metric.MISSED_DEADLINE_COUNT,
})

TIME_METRICS = frozenset({Metric.TIME_ON_TASK, Metric.INFO_SEARCH_TIME})


@dataclass(frozen=True)
class IndicatorKind:
    """A metric plus its scope.

    Activity-scoped metrics take an activity id; ``None`` there means every
    activity. Global metrics take no scope. ``sub_windows`` only matters for
    use stability.
    """

    metric: Metric
    scope: Optional[str] = None
    sub_windows: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "metric", Metric(self.metric))
        kind = SCOPE_KIND[self.metric]
        if kind in ("object", "process") and not self.scope:
            raise ValueError(f"{self.metric.value} needs a {kind} scope")
        if kind == "global" and self.scope is not None:
            raise ValueError(f"{self.metric.value} takes no scope")
        if self.sub_windows < 1:
            raise ValueError("sub_windows must be >= 1")

    @property
    def scope_kind(self) -> str:
        return SCOPE_KIND[self.metric]

    @property
    def breachable(self) -> bool:
        return self.metric is not Metric.EXCHANGE_TYPE_PROFILE


@dataclass(frozen=True)
class Window:
    """Closed simulated-time interval; ``None`` bounds are open."""

    start: Optional[int] = None
    end: Optional[int] = None

    def contains(self, at: int) -> bool:
        return (self.start is None or at >= self.start) and (self.end is None or at <= self.end)

    def to_dict(self) -> dict[str, Optional[int]]:
        return {"start": self.start, "end": self.end}


UNBOUNDED = Window()


@dataclass(frozen=True)
class IndicatorValue:
    value: Union[float, dict[str, int]]
    seq_range: tuple[int, int]
    window: Window
    at: int
    indicator_id: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "indicator_id": self.indicator_id,
            "value": self.value,
            "seq_range": list(self.seq_range),
            "window": self.window.to_dict(),
            "at": self.at,
        }


@dataclass(frozen=True)
class Breach:
    indicator_id: str
    value: IndicatorValue
    threshold: float
    direction: Direction


def _events(store: Iterable[TraceEvent]) -> list[TraceEvent]:
    return list(store)


def _in_window(events: Sequence[TraceEvent], window: Window) -> list[TraceEvent]:
    lo, hi = window.start, window.end
    if lo is None and hi is None:
        return list(events)
    lo = float("-inf") if lo is None else lo
    hi = float("inf") if hi is None else hi
    return [ev for ev in events if lo <= ev.event.at <= hi]


def scope_seen(kind: IndicatorKind, store: Iterable[TraceEvent]) -> bool:
    """Whether the indicator's scope id appears anywhere in ``store``."""
    if kind.scope is None:
        return True
    attr = {"object": "object_id", "activity": "activity_id", "process": "process_id"}[kind.scope_kind]
    return any(getattr(ev.event, attr) == kind.scope for ev in store)


def _activity_spans(events: Sequence[TraceEvent]) -> dict[tuple[Any, Any], tuple[int, Optional[int]]]:
    """(instance, activity) -> (started_at, completed_at) for paired events."""
    spans: dict[tuple[Any, Any], list[Optional[int]]] = {}
    for ev in events:
        e = ev.event
        key = (e.instance_id, e.activity_id)
        if e.kind is EventKind.ACTIVITY_STARTED:
            spans.setdefault(key, [e.at, None])
        elif e.kind is EventKind.ACTIVITY_COMPLETED and key in spans and spans[key][1] is None:
            spans[key][1] = e.at
    return {k: (v[0], v[1]) for k, v in spans.items()}


def _count(events: Sequence[TraceEvent], kind: EventKind, attr: str, scope: Optional[str]) -> int:
    return sum(
        1 for ev in events
        if ev.event.kind is kind and (scope is None or getattr(ev.event, attr) == scope)
    )


def _user_events(events: Sequence[TraceEvent]) -> list[TraceEvent]:
    return [ev for ev in events
            if ev.event.actor_id is not None and ev.event.kind is not EventKind.DEFINITION_REVISED]


def evaluate(
    kind: IndicatorKind,
    store: Iterable[TraceEvent],
    window: Optional[Window] = None,
) -> IndicatorValue:
    """Compute one indicator over the events of ``store`` inside ``window``.

    Unknown scopes evaluate to zero (or an empty histogram) rather than
    raising.
    """
    window = window or UNBOUNDED
    all_events = _events(store)
    events = _in_window(all_events, window)
    metric, scope = kind.metric, kind.scope
    value: Union[float, dict[str, int]]

    if metric is Metric.CHANGE_REQUESTS_PER_OBJECT:
        value = _count(events, EventKind.CHANGE_REQUESTED, "object_id", scope)
    elif metric is Metric.VALIDATION_REQUESTS_PER_OBJECT:
        value = _count(events, EventKind.VALIDATION_REQUESTED, "object_id", scope)
    elif metric is Metric.PROCESS_MODIFICATION_COUNT:
        value = _count(events, EventKind.DEFINITION_REVISED, "process_id", scope)
    elif metric is Metric.MISSED_DEADLINE_COUNT:
        value = _count(events, EventKind.DEADLINE_MISSED, "activity_id", scope)
    elif metric is Metric.TIME_ON_TASK:
        value = sum(
            done - start for (_, act), (start, done) in _activity_spans(events).items()
            if done is not None and (scope is None or act == scope)
        )
    elif metric is Metric.INFO_SEARCH_TIME:
        searching = {
            (ev.event.instance_id, ev.event.activity_id) for ev in events
            if ev.event.kind is EventKind.SEARCH_PERFORMED and ev.event.object_id == scope
        }
        value = sum(
            done - start for key, (start, done) in _activity_spans(events).items()
            if done is not None and key in searching
        )
    elif metric is Metric.EXCHANGE_TYPE_PROFILE:
        value = dict(sorted(Counter(
            ev.event.detail or "unspecified" for ev in events
            if ev.event.kind is EventKind.EXCHANGE_PERFORMED
        ).items()))
    elif metric is Metric.USER_COUNT:
        value = len({ev.event.actor_id for ev in _user_events(events)})
    elif metric is Metric.EXPLOITATION_ABILITY:
        value = exploitation_ability(_user_events(events))
    elif metric is Metric.USE_STABILITY:
        value = use_stability(_user_events(events), window, kind.sub_windows)
    else:  # pragma: no cover - enum is closed
        raise ValueError(metric)

    seqs = [ev.seq for ev in all_events]
    seq_range = (min(seqs), max(seqs) + 1) if seqs else (0, 0)
    at = window.end if window.end is not None else max((ev.event.at for ev in all_events), default=0)
    return IndicatorValue(value=value, seq_range=seq_range, window=window, at=at)


def exploitation_ability(events: Sequence[TraceEvent]) -> float:
    """Mean over actors of (distinct event kinds they produced / kinds seen overall)."""
    by_actor: dict[str, set[EventKind]] = defaultdict(set)
    for ev in events:
        by_actor[ev.event.actor_id].add(ev.event.kind)
    if not by_actor:
        return 0.0
    total_kinds = len(set().union(*by_actor.values()))
    ratios = [len(kinds) / total_kinds for _, kinds in sorted(by_actor.items())]
    return sum(ratios) / len(ratios)


def use_stability(events: Sequence[TraceEvent], window: Window, sub_windows: int) -> float:
    """1 / (1 + population variance of event counts per equal-width sub-window)."""
    times = [ev.event.at for ev in events]
    start = window.start if window.start is not None else min(times, default=0)
    end = window.end if window.end is not None else max(times, default=0)
    span = end - start + 1
    if span <= 0:
        return 1.0
    counts = [0] * sub_windows
    for t in times:
        counts[min(sub_windows - 1, (t - start) * sub_windows // span)] += 1
    mean = sum(counts) / sub_windows
    variance = sum((c - mean) ** 2 for c in counts) / sub_windows
    return 1.0 / (1.0 + variance)


def indicator_window(indicator: Indicator, store: Iterable[TraceEvent]) -> Window:
    """Trailing window ending at the latest event time, or unbounded."""
    if indicator.window is None:
        return UNBOUNDED
    end = max((ev.event.at for ev in store), default=0)
    return Window(end - indicator.window, end)


def evaluate_indicator(indicator: Indicator, store: Iterable[TraceEvent]) -> IndicatorValue:
    events = _events(store)
    value = evaluate(indicator.calculation, events, indicator_window(indicator, events))
    return IndicatorValue(value.value, value.seq_range, value.window, value.at, indicator.id)


def check(indicator: Indicator, store: Iterable[TraceEvent]) -> Optional[Breach]:
    """Breach when the value crosses the threshold (inclusive), else ``None``.

    Histogram-valued indicators are never breachable, and neither is an
    indicator whose window holds no events: nothing observed, nothing to
    detect.
    """
    events = _events(store)
    window = indicator_window(indicator, events)
    if not any(window.contains(ev.event.at) for ev in events):
        return None
    value = evaluate_indicator(indicator, events)
    if not indicator.calculation.breachable or not isinstance(value.value, (int, float)):
        return None
    if indicator.threshold.crossed_by(value.value):
        return Breach(indicator.id, value, indicator.threshold.value, indicator.threshold.direction)
    return None


@dataclass
class IndicatorReport:
    indicator_id: str
    value: IndicatorValue
    breach: bool
    scope_known: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.indicator_id,
            "value": self.value.value,
            "window": self.value.window.to_dict(),
            "breach": self.breach,
        }


def report(indicators: Iterable[Indicator], store: Iterable[TraceEvent]) -> list[IndicatorReport]:
    """Evaluate every indicator in id order."""
    events = _events(store)
    rows = []
    for ind in sorted(indicators, key=lambda i: i.id):
        known = scope_seen(ind.calculation, events)
        if not known:
            logger.warning("indicator %s: scope %r never appears in the trace", ind.id, ind.calculation.scope)
        rows.append(IndicatorReport(
            ind.id, evaluate_indicator(ind, events), check(ind, events) is not None, known
        ))
    return rows
