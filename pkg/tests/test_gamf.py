import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from automaint.gamf import (
    EFFECTOR,
    EVENT_GENERATOR,
    METRIC_EXTRACTOR,
    POLICY_EVALUATOR,
    AdapterDescriptor,
    Event,
    Gamf,
    KnowledgeFilter,
    MetricValue,
    ProtectionError,
    RegistryError,
    RejectedRecord,
    TimeRegression,
    TriggerSpec,
    parse_dump_line,
)


def gen(aid, types=(), protected=False):
    return AdapterDescriptor(aid, EVENT_GENERATOR, facet="net", claimed_event_types=types,
                             protected=protected)


def test_record_without_triggers():
    g = Gamf()
    fired = g.record_event(Event("lookup_completed", 100))
    assert len(g) == 1 and fired == []


def test_on_event_trigger_fires_once_at_event_time():
    g = Gamf()
    calls = []
    g.register_adapter(AdapterDescriptor("pe", POLICY_EVALUATOR),
                       TriggerSpec.on_event("peer_access_failed"),
                       lambda gamf, t: calls.append(t))
    g.record_event(Event("peer_access_failed", 5))
    g.record_event(Event("other", 6))
    assert calls == [5]


def test_claimed_type_conflict_rejected():
    g = Gamf()
    g.register_adapter(gen("g1", {"X"}))
    with pytest.raises(RegistryError):
        g.register_adapter(gen("g2", {"X"}))
    assert len(g) == 0
    assert [a.adapter_id for a in g.adapters()] == ["g1"]


def test_claimed_type_cannot_be_recorded_by_other_source():
    g = Gamf()
    g.register_adapter(gen("g1", {"X"}))
    g.register_adapter(gen("g2", {"Y"}))
    with pytest.raises(RejectedRecord):
        g.record_event(Event("X", 1), source="g2")
    with pytest.raises(RejectedRecord):
        g.record_event(Event("X", 1))
    g.record_event(Event("X", 1), source="g1")
    assert len(g) == 1


def test_query_half_open_window():
    g = Gamf()
    for t in (1, 2, 3):
        g.record_event(Event("A", t))
    got = g.query(KnowledgeFilter(window=(2, 3)))
    assert [e.timestamp for e in got] == [2]


def test_query_empty_store():
    assert Gamf().query(KnowledgeFilter(type_filter={"A"})) == []


def test_cursor_exhaustion_and_per_type_cursors():
    g = Gamf()
    g.register_adapter(AdapterDescriptor("m", METRIC_EXTRACTOR))
    g.record_event(Event("A", 1))
    g.record_event(Event("B", 2))
    f = KnowledgeFilter(type_filter={"A"}, consume_since_last=True)
    assert len(g.query(f, "m")) == 1
    assert g.query(f, "m") == []
    # the B cursor is untouched by the A query
    fb = KnowledgeFilter(type_filter={"B"}, consume_since_last=True)
    assert len(g.query(fb, "m")) == 1
    g.record_event(Event("A", 3))
    assert [e.timestamp for e in g.query(f, "m")] == [3]


def test_cursor_query_needs_adapter():
    with pytest.raises(ValueError):
        Gamf().query(KnowledgeFilter(consume_since_last=True))


def test_register_unregister():
    g = Gamf()
    g.register_adapter(AdapterDescriptor("e", EFFECTOR))
    g.unregister("e")
    assert g.adapters() == []
    with pytest.raises(RegistryError):
        g.unregister("e")


def test_protected_adapter_survives_unregister():
    g = Gamf()
    g.register_adapter(gen("core", {"X"}, protected=True))
    with pytest.raises(ProtectionError):
        g.unregister("core")
    assert "core" in g


def test_duplicate_id_rejected():
    g = Gamf()
    g.register_adapter(AdapterDescriptor("a", EFFECTOR))
    with pytest.raises(RegistryError):
        g.register_adapter(AdapterDescriptor("a", METRIC_EXTRACTOR))


def test_facet_listing():
    g = Gamf()
    g.register_adapter(AdapterDescriptor("m1", METRIC_EXTRACTOR, facet="f"))
    g.register_adapter(AdapterDescriptor("m2", METRIC_EXTRACTOR, facet="f"))
    g.register_adapter(AdapterDescriptor("m3", METRIC_EXTRACTOR, facet="other"))
    assert len(g.adapters(facet="f")) == 2


def test_periodic_catch_up():
    g = Gamf()
    calls = []
    g.register_adapter(AdapterDescriptor("p", POLICY_EVALUATOR), TriggerSpec.periodic(2000),
                       lambda gamf, t: calls.append(t))
    assert g.advance(6000) == ["p", "p", "p"]
    assert calls == [2000, 4000, 6000]
    assert g.next_due() == 8000


def test_advance_without_triggers():
    assert Gamf().advance(1000) == []


def test_same_instant_fires_in_id_order():
    logs = []
    for _ in range(2):
        g = Gamf()
        for aid in ("zeta", "alpha", "mid"):
            g.register_adapter(AdapterDescriptor(aid, POLICY_EVALUATOR), TriggerSpec.periodic(100))
        logs.append(g.advance(100))
    assert logs[0] == logs[1] == ["alpha", "mid", "zeta"]


def test_time_regression():
    g = Gamf()
    g.advance(10)
    with pytest.raises(TimeRegression):
        g.advance(5)


def test_custom_trigger_every_third_event():
    g = Gamf()
    seen = {"n": 0}
    calls = []

    def pred(now, new):
        seen["n"] += len(new)
        return len(new) > 0 and seen["n"] % 3 == 0

    g.register_adapter(AdapterDescriptor("c", POLICY_EVALUATOR), TriggerSpec.custom(pred),
                       lambda gamf, t: calls.append(t))
    for t in range(1, 8):
        g.record_event(Event("A", t))
    assert calls == [3, 6]


def test_trigger_validation():
    with pytest.raises(ValueError):
        TriggerSpec.periodic(0)
    with pytest.raises(ValueError):
        TriggerSpec("on_event")
    with pytest.raises(ValueError):
        KnowledgeFilter(window=(5, 1))
    with pytest.raises(ValueError):
        Event("", 0)
    with pytest.raises(ValueError):
        MetricValue("m", 0, math.inf)


def test_dump_round_trip(tmp_path):
    g = Gamf()
    g.record_event(Event("a,b", 3, {"k=1": "v,w"}))
    g.record_metric(MetricValue("NEMO", 4, 2.5, {"n": "3"}))
    path = tmp_path / "k.txt"
    g.dump(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[1] == "4,metric,NEMO,2.5,n=3"
    assert [parse_dump_line(x) for x in lines] == g.query()


records = st.lists(st.tuples(st.sampled_from("ABC"), st.integers(0, 50)), max_size=30)


@settings(max_examples=100, deadline=None)
@given(records, st.integers(0, 50), st.integers(0, 50))
def test_query_is_sorted_subset(recs, lo, width):
    g = Gamf()
    for typ, t in recs:
        g.record_event(Event(typ, t))
    everything = g.query(KnowledgeFilter())
    assert len(everything) == len(recs)
    got = g.query(KnowledgeFilter(type_filter={"A", "B"}, window=(lo, lo + width)))
    assert [r.timestamp for r in got] == sorted(r.timestamp for r in got)
    expect = sorted(t for typ, t in recs if typ in "AB" and lo <= t < lo + width)
    assert [r.timestamp for r in got] == expect
    # append-only: the store did not change
    assert g.query(KnowledgeFilter()) == everything


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 5000), min_size=1, max_size=5), st.lists(st.integers(0, 20000), max_size=8))
def test_replay_gives_identical_firing_log(intervals, steps):
    def replay():
        g = Gamf()
        for i, iv in enumerate(intervals):
            g.register_adapter(AdapterDescriptor(f"p{i}", POLICY_EVALUATOR), TriggerSpec.periodic(iv))
        now = 0
        for s in steps:
            now += s
            g.record_event(Event("tick", now))
            g.advance(now)
        return g.firing_log

    assert replay() == replay()
