import logging
import math
import random

import pytest
from helpers import (
    oracle_count,
    oracle_info_search_time,
    oracle_time_on_task,
    random_trace,
)
from hypothesis import given, settings
from hypothesis import strategies as st

from collabmon.engine import EngineEvent, EventKind
from collabmon.indicators import (
    COUNTING_METRICS,
    SCOPE_KIND,
    IndicatorKind,
    Metric,
    WeightFunction,
    Window,
    check,
    delta_c,
    evaluate,
    evaluate_indicator,
    report,
    select_collaborative_objects,
)
from collabmon.metamodel import Indicator, Threshold
from collabmon.observation import ObjectUsageStats, TraceStore

K = EventKind
CRITERIA = ("modifications", "multi_actor_accesses", "output_flows")


def wf(*alphas):
    return WeightFunction(tuple(zip(CRITERIA, alphas)))


def dot(alphas, values):
    # independent dot product: fsum over products, no shared code with delta_c
    return math.fsum(a * v for a, v in zip(alphas, values))


# --- collaborative weight -------------------------------------------------------


def test_zero_weights_give_zero():
    assert delta_c(wf(0, 0, 0), ObjectUsageStats("o", 9, 9, 9)) == 0


def test_unit_weights():
    assert delta_c(wf(1, 1, 1), ObjectUsageStats("o", 2, 3, 5)) == 10


def test_missing_criteria_count_as_zero():
    w = WeightFunction((("modifications", 2.0), ("reviews", 5.0)))
    assert delta_c(w, {"modifications": 3}) == 6


def test_random_weights_match_dot_product():
    rng = random.Random(1)
    for _ in range(100):
        alphas = [rng.uniform(0, 10) for _ in range(3)]
        values = [rng.randint(0, 50) for _ in range(3)]
        got = delta_c(wf(*alphas), dict(zip(CRITERIA, values)))
        assert got == pytest.approx(dot(alphas, values), rel=1e-12, abs=0)


def test_weight_function_rejects_bad_weights():
    with pytest.raises(ValueError):
        WeightFunction(())
    with pytest.raises(ValueError):
        wf(1, -1, 0)
    with pytest.raises(ValueError):
        wf(1, float("inf"), 0)


ints = st.integers(0, 10_000)


@given(st.lists(ints, min_size=3, max_size=3), st.lists(ints, min_size=3, max_size=3),
       st.lists(ints, min_size=3, max_size=3), st.integers(0, 50))
def test_linearity(alphas, a, b, c):
    w = wf(*alphas)
    A = dict(zip(CRITERIA, a))
    B = dict(zip(CRITERIA, b))
    AB = {k: A[k] + B[k] for k in CRITERIA}
    assert delta_c(w, AB) == delta_c(w, A) + delta_c(w, B)
    assert delta_c(w.scaled(c), A) == c * delta_c(w, A)


def test_cutoff_zero_selects_everything():
    stats = {o: ObjectUsageStats(o) for o in ("b", "a", "c")}
    assert select_collaborative_objects(wf(1, 2, 0), stats, 0) == ["a", "b", "c"]


def test_cutoff_above_max_selects_nothing():
    stats = {o: ObjectUsageStats(o, n, 0, 0) for n, o in enumerate("abc")}
    top = max(delta_c(wf(1, 1, 1), s) for s in stats.values())
    assert select_collaborative_objects(wf(1, 1, 1), stats, top + 1) == []
    assert select_collaborative_objects(wf(1, 1, 1), stats, top) == ["c"]


@settings(max_examples=100)
@given(st.lists(st.tuples(ints, ints, ints), min_size=1, max_size=20),
       st.tuples(st.floats(0, 5), st.floats(0, 5), st.floats(0, 5)),
       st.floats(0, 100), st.floats(0.01, 100))
def test_selection_is_scale_invariant(rows, alphas, cutoff, c):
    stats = {f"o{i}": ObjectUsageStats(f"o{i}", *r) for i, r in enumerate(rows)}
    w = wf(*alphas)
    base = select_collaborative_objects(w, stats, cutoff)
    # scaling by c can move a value sitting exactly on the cutoff by one ulp;
    # compare only objects clear of the boundary
    clear = {o for o, s in stats.items() if abs(delta_c(w, s) - cutoff) > 1e-9 * max(1.0, cutoff)}
    scaled = select_collaborative_objects(w.scaled(c), stats, cutoff * c)
    assert set(base) & clear == set(scaled) & clear


# --- catalogue ----------------------------------------------------------------


def ev(kind, obj=None, at=0, actor="u1", act="a", inst="i", detail=None, process="p"):
    return EngineEvent(kind, process, 0, inst, act, actor, obj, at, None, detail)


def store_of(*events):
    s = TraceStore()
    for e in events:
        s.collect(e)
    return s


@pytest.mark.parametrize("metric", sorted(COUNTING_METRICS, key=lambda m: m.value))
def test_empty_store_counts_zero(metric):
    scope = "x" if metric is not Metric.MISSED_DEADLINE_COUNT else None
    assert evaluate(IndicatorKind(metric, scope), TraceStore()).value == 0


def test_validation_requests_on_one_object():
    s = store_of(*(ev(K.VALIDATION_REQUESTED, "X", t) for t in range(3)),
                 ev(K.VALIDATION_REQUESTED, "Y", 4), ev(K.CHANGE_REQUESTED, "X", 5))
    got = evaluate(IndicatorKind(Metric.VALIDATION_REQUESTS_PER_OBJECT, "X"), s).value
    assert got == oracle_count(s.snapshot(), "ValidationRequested", "object_id", "X") == 3


def test_uniform_rate_is_perfectly_stable():
    s = store_of(*(ev(K.OBJECT_ACCESSED, "X", t) for t in range(10)))
    assert evaluate(IndicatorKind(Metric.USE_STABILITY), s).value == 1.0


def test_bursty_rate_is_less_stable():
    s = store_of(*(ev(K.OBJECT_ACCESSED, "X", 0) for _ in range(9)), ev(K.OBJECT_ACCESSED, "X", 9))
    # counts per sub-window: [9, 0, ..., 0, 1] -> mean 1, variance (64 + 8*1 + 0) / 10
    assert evaluate(IndicatorKind(Metric.USE_STABILITY), s).value == pytest.approx(1 / (1 + 7.2))


def test_time_on_task_and_info_search():
    s = store_of(
        ev(K.ACTIVITY_STARTED, at=0, act="t"), ev(K.ACTIVITY_COMPLETED, at=4, act="t"),
        ev(K.ACTIVITY_STARTED, at=4, act="s"), ev(K.SEARCH_PERFORMED, "X", 4, act="s"),
        ev(K.ACTIVITY_COMPLETED, at=7, act="s"),
        ev(K.ACTIVITY_STARTED, at=1, act="t", inst="j"), ev(K.ACTIVITY_COMPLETED, at=3, act="t", inst="j"),
    )
    assert evaluate(IndicatorKind(Metric.TIME_ON_TASK, "t"), s).value == 6
    assert evaluate(IndicatorKind(Metric.TIME_ON_TASK), s).value == 9
    assert evaluate(IndicatorKind(Metric.INFO_SEARCH_TIME, "X"), s).value == 3


def test_exchange_profile_is_a_histogram_and_never_breaches():
    s = store_of(ev(K.EXCHANGE_PERFORMED, detail="email"), ev(K.EXCHANGE_PERFORMED, detail="email"),
                 ev(K.EXCHANGE_PERFORMED, detail="portal"))
    kind = IndicatorKind(Metric.EXCHANGE_TYPE_PROFILE)
    assert evaluate(kind, s).value == {"email": 2, "portal": 1}
    assert not kind.breachable
    assert check(Indicator("x", "o", kind, Threshold(0, "AtLeast")), s) is None


def test_user_count_and_exploitation_ability():
    s = store_of(ev(K.ACTIVITY_STARTED, actor="a"), ev(K.OBJECT_MODIFIED, "X", actor="a"),
                 ev(K.ACTIVITY_STARTED, actor="b"), ev(K.ACTIVITY_ENABLED, actor=None))
    assert evaluate(IndicatorKind(Metric.USER_COUNT), s).value == 2
    # a produced 2 of the 2 kinds seen, b produced 1 of 2
    assert evaluate(IndicatorKind(Metric.EXPLOITATION_ABILITY), s).value == pytest.approx(0.75)


def test_process_modifications_count_revision_events():
    s = store_of(ev(K.DEFINITION_REVISED, process="p"), ev(K.DEFINITION_REVISED, process="q"),
                 ev(K.DEFINITION_REVISED, process="p"))
    assert evaluate(IndicatorKind(Metric.PROCESS_MODIFICATION_COUNT, "p"), s).value == 2


def test_scope_kind_must_match():
    with pytest.raises(ValueError):
        IndicatorKind(Metric.CHANGE_REQUESTS_PER_OBJECT)
    with pytest.raises(ValueError):
        IndicatorKind(Metric.USER_COUNT, "x")


def test_unknown_scope_is_zero_with_warning(caplog):
    s = store_of(ev(K.CHANGE_REQUESTED, "X"))
    ind = Indicator("cr", "few change requests", IndicatorKind(Metric.CHANGE_REQUESTS_PER_OBJECT, "nope"),
                    Threshold(1, "AtLeast"))
    with caplog.at_level(logging.WARNING, logger="collabmon"):
        [row] = report([ind], s)
    assert row.value.value == 0 and not row.breach and not row.scope_known
    assert "nope" in caplog.text


def test_window_is_closed_and_trailing():
    s = store_of(*(ev(K.CHANGE_REQUESTED, "X", t) for t in (0, 5, 10, 15, 20)))
    kind = IndicatorKind(Metric.CHANGE_REQUESTS_PER_OBJECT, "X")
    assert evaluate(kind, s, Window(5, 15)).value == 3
    ind = Indicator("cr", "o", kind, Threshold(3, "AtLeast"), window=10)
    value = evaluate_indicator(ind, s)
    assert value.window == Window(10, 20) and value.value == 3


# --- thresholds -----------------------------------------------------------------


def _indicator(threshold, direction):
    return Indicator("v", "o", IndicatorKind(Metric.VALIDATION_REQUESTS_PER_OBJECT, "X"),
                     Threshold(threshold, direction))


def _n_validations(n):
    # one unrelated event keeps the window non-empty when n is 0
    return store_of(ev(K.ACTIVITY_STARTED), *(ev(K.VALIDATION_REQUESTED, "X", t) for t in range(n)))


def test_at_least_below_threshold():
    assert check(_indicator(5, "AtLeast"), _n_validations(4)) is None


def test_at_least_on_threshold_is_inclusive():
    breach = check(_indicator(5, "AtLeast"), _n_validations(5))
    assert breach is not None and breach.value.value == 5


@pytest.mark.parametrize("value", [0, 1, 2, 3, 7])
def test_at_most_is_inclusive_comparison(value):
    # oracle: direct inclusive comparison value <= threshold
    breach = check(_indicator(2, "AtMost"), _n_validations(value))
    assert (breach is not None) is (value <= 2)


# --- randomized agreement with single-pass oracles -------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(0, 400), st.one_of(st.none(), st.tuples(st.integers(0, 300), st.integers(0, 300))))
def test_counting_and_time_indicators_match_oracles(seed, n, bounds):
    events = random_trace(random.Random(seed), n).snapshot()
    lo, hi = (None, None) if bounds is None else (min(bounds), max(bounds))
    window = Window(lo, hi)
    for obj in ("o1", "o2", "missing"):
        assert evaluate(IndicatorKind(Metric.CHANGE_REQUESTS_PER_OBJECT, obj), events, window).value == \
            oracle_count(events, "ChangeRequested", "object_id", obj, lo, hi)
        assert evaluate(IndicatorKind(Metric.VALIDATION_REQUESTS_PER_OBJECT, obj), events, window).value == \
            oracle_count(events, "ValidationRequested", "object_id", obj, lo, hi)
        assert evaluate(IndicatorKind(Metric.INFO_SEARCH_TIME, obj), events, window).value == \
            oracle_info_search_time(events, obj, lo, hi)
    for act in (None, "t1", "s1"):
        assert evaluate(IndicatorKind(Metric.MISSED_DEADLINE_COUNT, act), events, window).value == \
            oracle_count(events, "DeadlineMissed", "activity_id", act, lo, hi)
        assert evaluate(IndicatorKind(Metric.TIME_ON_TASK, act), events, window).value == \
            oracle_time_on_task(events, act, lo, hi)
    assert evaluate(IndicatorKind(Metric.PROCESS_MODIFICATION_COUNT, "p1"), events, window).value == \
        oracle_count(events, "DefinitionRevised", "process_id", "p1", lo, hi)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(0, 200), st.integers(1, 100))
def test_counting_indicators_are_monotone(seed, n, more):
    rng = random.Random(seed)
    store = random_trace(rng, n + more)
    prefix, full = store.snapshot(n), store.snapshot()
    for metric in COUNTING_METRICS:
        scope = "p1" if metric is Metric.PROCESS_MODIFICATION_COUNT else (
            None if metric is Metric.MISSED_DEADLINE_COUNT else "o1")
        kind = IndicatorKind(metric, scope)
        assert evaluate(kind, full).value >= evaluate(kind, prefix).value


def test_evaluation_is_reproducible():
    events = random_trace(random.Random(5), 500).snapshot()
    for metric in Metric:
        scope = {"object": "o1", "activity": "t1", "process": "p1", "global": None}[SCOPE_KIND[metric]]
        kind = IndicatorKind(metric, scope)
        assert evaluate(kind, events) == evaluate(kind, list(events))


def test_no_events_in_window_means_no_breach():
    users = Indicator("u", "o", IndicatorKind(Metric.USER_COUNT), Threshold(1, "AtMost"))
    assert check(users, TraceStore()) is None
    assert check(users, store_of(ev(K.OBJECT_ACCESSED, "X", actor="solo"))) is not None
