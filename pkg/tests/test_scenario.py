import random

import pytest

from automaint.scenario import (
    HOUR,
    MBPS,
    ChurnPattern,
    Jittered,
    LinkSpeed,
    LinkSpeedSchedule,
    ScenarioError,
    TraceFormatError,
    build_churn_schedule,
    build_workload,
    churn_preset,
    generate_trace,
    load_config,
    lookup_count,
    parse_trace_lines,
    parse_trace_workload,
    replica_keys,
    static_links,
    trace_batches,
    workload_preset,
    write_trace,
)

IDS = list(range(0, 2 ** 16, 4096))


def test_jittered_draws_stay_in_range():
    rng = random.Random(3)
    j = Jittered(200_000, 40_000)
    draws = [j.draw(rng) for _ in range(10_000)]
    assert min(draws) >= 160_000 and max(draws) <= 240_000
    assert abs(sum(draws) / len(draws) - 200_000) < 2_000
    with pytest.raises(ValueError):
        Jittered(10, 10)


def test_high_churn_durations_in_range():
    sched = build_churn_schedule(churn_preset("high", seed=5), range(400), 4 * HOUR)
    ons, offs = [], []
    for cycles in sched.values():
        prev_up = 0
        for down, up in cycles:
            ons.append(down - prev_up)
            offs.append(up - down)
            prev_up = up
    assert len(ons) > 10_000
    assert 160_000 <= min(ons) and max(ons) <= 240_000
    assert 80_000 <= min(offs) and max(offs) <= 120_000


def test_doc_churn_durations_in_range():
    sched = build_churn_schedule(churn_preset("high", "doc", seed=2), range(200), HOUR)
    firsts, ons, offs = [], [], []
    for cycles in sched.values():
        prev_up = None
        for down, up in cycles:
            (firsts if prev_up is None else ons).append(down - (prev_up or 0))
            offs.append(up - down)
            prev_up = up
    assert 47_000 <= min(firsts) and max(firsts) <= 67_000
    assert 32_000 <= min(ons) and max(ons) <= 42_000
    assert 25_000 <= min(offs) and max(offs) <= 29_000


def test_low_churn_never_goes_down():
    sched = build_churn_schedule(churn_preset("low"), IDS, 40 * 60_000)
    assert all(c == [] for c in sched.values())


def test_locally_varying_split():
    sched = build_churn_schedule(churn_preset("locally_varying", seed=1), IDS, HOUR)
    quiet = [n for n, c in sched.items() if not c]
    assert len(quiet) == 4


def test_temporally_varying_downs_only_in_high_phases():
    p = churn_preset("temporally_varying", seed=4)
    sched = build_churn_schedule(p, range(50), 4_000_000)
    downs = [d for c in sched.values() for d, _ in c]
    assert downs
    assert all((d // p.phase_ms) % 2 == 1 for d in downs)


def test_schedule_determinism_and_validation():
    p = churn_preset("high", seed=9)
    assert build_churn_schedule(p, IDS, HOUR) == build_churn_schedule(p, IDS, HOUR)
    assert build_churn_schedule(p, IDS, HOUR) != build_churn_schedule(
        churn_preset("high", seed=10), IDS, HOUR)
    with pytest.raises(ValueError):
        build_churn_schedule(p, IDS, 0)
    with pytest.raises(ValueError):
        ChurnPattern("medium")
    with pytest.raises(ValueError):
        churn_preset("low", layer="disk")


def test_workload_presets():
    light = build_workload(workload_preset("light"), 32)
    assert [b.earliest_ms for b in light] == [i * 300_000 for i in range(10)]
    heavy = build_workload(workload_preset("heavy"), 32)
    assert lookup_count(heavy) == 6000
    assert all(b.earliest_ms == 0 and b.gap_ms == 0 for b in heavy)
    var = build_workload(workload_preset("variable"), 32)
    assert lookup_count(var) == 1000
    assert [i for i, b in enumerate(var) if b.gap_ms] == list(range(100, 1000, 100))
    assert build_workload(workload_preset("heavy", 3), 32) == build_workload(
        workload_preset("heavy", 3), 32)
    with pytest.raises(ValueError):
        workload_preset("trace")


def test_replica_keys_are_spread():
    assert replica_keys(1, 4) == (1, 5, 9, 13)
    assert replica_keys(15, 4) == (15, 3, 7, 11)


def test_parse_empty_trace():
    assert parse_trace_lines([]) == ()
    assert trace_batches((), 32) == []


def test_trace_expansion_depth_two_data():
    recs = parse_trace_lines(["# offset,kind,depth,file", "100,data,2,f1"])
    batches = trace_batches(recs, 32)
    assert [len(b.keys) for b in batches] == [4, 4, 1, 1, 1, 1]
    assert all(b.earliest_ms == 100 for b in batches)
    meta = trace_batches(parse_trace_lines(["5,meta,3,x"]), 32)
    assert [len(b.keys) for b in meta] == [4, 4, 4]


@pytest.mark.parametrize("lines, lineno", [
    (["10,meta,1,a", "5,meta,1,b"], 2),
    (["10,meta,1"], 1),
    (["x,meta,1,a"], 1),
    (["1,write,1,a"], 1),
    (["1,meta,0,a"], 1),
    (["", "1,meta,1,"], 2),
])
def test_trace_errors_name_the_line(lines, lineno):
    with pytest.raises(TraceFormatError) as exc:
        parse_trace_lines(lines)
    assert exc.value.lineno == lineno
    assert f"line {lineno}" in str(exc.value)


def test_trace_file_round_trip(tmp_path):
    recs = generate_trace(50, seed=2)
    path = tmp_path / "t.csv"
    write_trace(path, recs)
    w = parse_trace_workload(path)
    assert w.records == recs
    assert lookup_count(build_workload(w, 32)) == lookup_count(trace_batches(recs, 32))


def test_static_links():
    s = LinkSpeedSchedule("server_bottleneck")
    assert s.at(-1, 0) == LinkSpeed(78 * MBPS, 0.0)
    assert s.at(2, 999) == LinkSpeed(3 * MBPS, 0.020)
    c = static_links(LinkSpeed(1, 0.1), LinkSpeed(2, 0.2), n_servers=2)
    assert c.at(1, 0).bandwidth == 2
    with pytest.raises(ValueError):
        LinkSpeed(0, 0)
    with pytest.raises(ValueError):
        LinkSpeedSchedule("custom")


def test_varying_links_redraw_per_period():
    s = LinkSpeedSchedule("temporally_varying", seed=1)
    a, b = s.at(0, 0.0), s.at(0, 9.9)
    assert a == b
    assert s.at(0, 10.0) != a
    for t in range(0, 600, 10):
        link = s.at(1, t)
        assert s.bw_min <= link.bandwidth <= s.bw_max
        assert 0 <= link.latency <= s.lat_max


def _cfg(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text, encoding="utf-8")
    return p


def test_config_defaults_and_lists(tmp_path):
    cfg = load_config(_cfg(tmp_path, "[experiment]\nchurn = low, high\nrepetitions = 2\n"))
    exp = cfg["experiment"]
    assert exp["churn"] == ["low", "high"]
    assert exp["policies"] == ["policy0", "policy1", "policy2"]
    assert exp["repetitions"] == 2
    assert cfg["overlay"]["timeout_ms"] == 500


@pytest.mark.parametrize("text", [
    "[experiment]\nchurn = medium\n",
    "[experiment]\nworkload = trace\n",
    "[experiment]\nrepetitions = 0\n",
    "[experiment]\nrepetitions = many\n",
    "[experiment]\nlayer = disk\n",
    "[overlay]\nlatency_ms = fast\n",
    "[experiment]\nlayer = doc\n[doc]\nnetwork = wifi\n",
    "[extras]\nx = 1\n",
    "not an ini file",
])
def test_config_errors(tmp_path, text):
    with pytest.raises(ScenarioError):
        load_config(_cfg(tmp_path, text))


def test_shipped_configs_load():
    from pathlib import Path

    for p in sorted((Path(__file__).parent.parent / "configs").glob("*.ini")):
        load_config(p)
