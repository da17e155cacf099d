import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from automaint.gamf import Event, Gamf
from automaint.manager import (
    DECREASE,
    ER,
    INCREASE,
    LILT,
    MIN_INTERVAL,
    NEMO,
    NodeManager,
    OpPolicyConfig,
    SubPolicyParams,
    aggregate,
    extract_er,
    extract_lilt,
    extract_nemo,
    p_factor,
    policy_set,
    sub_policy_interval,
)
from automaint.overlay import (
    ACCESS_FAILED,
    EFFECTIVE,
    FIND_WORKING_SUCCESSOR,
    LOOKUP_COMPLETED,
    LOOKUP_FAILED,
    NON_EFFECTIVE,
    OPS,
    OUTCOME_EVENT,
    PEER_ACCESS_FAILED,
)

ALL = (0, math.inf)


def test_p_factor_values():
    assert p_factor(8, 0, 8) == 0.5
    assert p_factor(0, 0, 8) == 0.0
    assert p_factor(1600, 1600, 5) == 0.0
    assert p_factor(1e9, 0, math.inf) == 0.0
    assert p_factor(24, 0, 8) == 0.75


def test_sub_policy_interval_values():
    inc = SubPolicyParams(0, 8, INCREASE)
    dec = SubPolicyParams(0, 8, DECREASE)
    assert sub_policy_interval(2000, 8, inc) == 3000
    assert sub_policy_interval(2000, 8, dec) == 1000
    assert sub_policy_interval(2000, 0, inc) == 2000
    assert sub_policy_interval(2000, 1e12, dec) == MIN_INTERVAL
    with pytest.raises(ValueError):
        sub_policy_interval(0, 1, inc)


def test_aggregate():
    assert aggregate([3000, 1000]) == 2000
    with pytest.raises(ValueError):
        aggregate([])


def test_params_validation():
    with pytest.raises(ValueError):
        SubPolicyParams(0, 0, INCREASE)
    with pytest.raises(ValueError):
        SubPolicyParams(-1, 1, INCREASE)
    with pytest.raises(ValueError):
        SubPolicyParams(0, 1, "sideways")
    with pytest.raises(ValueError):
        OpPolicyConfig("check_predecessor", ((LILT, SubPolicyParams(0, 1, DECREASE)),))
    with pytest.raises(ValueError):
        policy_set("policy9")


def test_policy_tables():
    p1 = policy_set("policy1")
    subs = dict(p1["stabilize"].sub_policies)
    assert subs[NEMO] == SubPolicyParams(0, 8, INCREASE)
    assert subs[ER] == SubPolicyParams(0, 32, DECREASE)
    assert subs[LILT] == SubPolicyParams(1600, math.inf, DECREASE)
    assert LILT not in dict(p1["check_predecessor"].sub_policies)
    assert all(c.static and not c.immediate_on_error for c in policy_set("policy0").values())
    custom = policy_set("custom", custom=(SubPolicyParams(0, 1, INCREASE),) * 3)
    assert dict(custom["stabilize"].sub_policies)[ER].k == 1


def _store(events):
    g = Gamf()
    for typ, t, payload in events:
        g.record_event(Event(typ, t, payload))
    return g


def test_extract_nemo():
    assert extract_nemo(Gamf(), "stabilize", ALL).value == 0
    outcomes = [EFFECTIVE, NON_EFFECTIVE, EFFECTIVE, NON_EFFECTIVE, NON_EFFECTIVE]
    g = _store([(OUTCOME_EVENT["stabilize"], i, {"outcome": o}) for i, o in enumerate(outcomes)])
    assert extract_nemo(g, "stabilize", ALL).value == 3
    assert extract_nemo(g, "fix_next_finger", ALL).value == 0
    assert extract_nemo(g, "stabilize", (0, 2)).value == 1


def test_extract_er():
    g = _store([
        (PEER_ACCESS_FAILED, 1, {"role": "finger"}),
        (PEER_ACCESS_FAILED, 2, {"role": "finger"}),
        (FIND_WORKING_SUCCESSOR, 3, {}),
        (PEER_ACCESS_FAILED, 3, {"role": "successor"}),
    ])
    assert extract_er(g, "fix_next_finger", ALL).value == 2
    assert extract_er(g, "stabilize", ALL).value == 1
    assert extract_er(g, "check_predecessor", ALL).value == 0
    assert extract_er(Gamf(), "stabilize", ALL).value == 0


def test_extract_lilt():
    assert extract_lilt(Gamf(), ALL).value == 0
    g = _store([
        (LOOKUP_COMPLETED, 1, {"elapsed": "400"}),
        (LOOKUP_COMPLETED, 2, {"elapsed": "600"}),
        (LOOKUP_FAILED, 3, {"elapsed": "5000"}),
    ])
    assert extract_lilt(g, ALL).value == 500


# -- a manager driving a fake node ----------------------------------------

class FakeNode:
    def __init__(self, policy, initial=2000):
        self.intervals = {op: initial for op in OPS}
        self.trace = {op: [initial] for op in OPS}
        self.immediate = []
        self.mgr = NodeManager("n", policy_set(policy), self.intervals.__getitem__, self.apply)

    def apply(self, op, interval, immediate, now):
        self.intervals[op] = interval
        self.trace[op].append(interval)
        if immediate:
            self.immediate.append((op, now))

    def window(self, t, events):
        for typ, payload in events:
            self.mgr.record(typ, t - 1, payload)
        self.mgr.gamf.advance(t)


def quiet_window(rng_counts, node):
    evs = []
    for op in OPS:
        n_eff, n_non = rng_counts[op]
        evs += [(OUTCOME_EVENT[op], {"outcome": EFFECTIVE})] * n_eff
        evs += [(OUTCOME_EVENT[op], {"outcome": NON_EFFECTIVE})] * n_non
    evs += [(LOOKUP_COMPLETED, {"elapsed": str(e)}) for e in rng_counts["lookups"]]
    return evs


def failing_window(node):
    """Every maintenance run in the window fails; runs happen once per interval."""
    evs = []
    for op in OPS:
        runs = max(1, math.ceil(2000 / node.intervals[op]))
        for _ in range(runs):
            evs.append((OUTCOME_EVENT[op], {"outcome": ACCESS_FAILED}))
            if op == "stabilize":
                evs.append((PEER_ACCESS_FAILED, {"role": "successor"}))
                evs.append((FIND_WORKING_SUCCESSOR, {}))
            else:
                role = "finger" if op == "fix_next_finger" else "predecessor"
                evs.append((PEER_ACCESS_FAILED, {"role": role}))
        evs.append((LOOKUP_FAILED, {"elapsed": "500"}))
    return evs


def nondecreasing(xs):
    return all(b >= a for a, b in zip(xs, xs[1:]))


def nonincreasing(xs):
    return all(b <= a for a, b in zip(xs, xs[1:]))


window_counts = st.fixed_dictionaries({
    **{op: st.tuples(st.integers(0, 3), st.integers(0, 4)) for op in OPS},
    "lookups": st.lists(st.integers(1, 1599), max_size=5),
})


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["policy1", "policy2"]), st.lists(window_counts, min_size=1, max_size=40))
def test_zero_churn_intervals_never_shrink(policy, windows):
    node = FakeNode(policy)
    for i, counts in enumerate(windows, start=1):
        node.window(2000 * i, quiet_window(counts, node))
    for op in OPS:
        assert nondecreasing(node.trace[op])
    assert node.immediate == []


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["policy1", "policy2"]), st.integers(1, 5000))
def test_all_dead_intervals_shrink_to_clamp(policy, initial):
    node = FakeNode(policy, initial=initial + 100)
    for i in range(1, 401):
        node.window(2000 * i, failing_window(node))
    for op in OPS:
        assert nonincreasing(node.trace[op])
        assert node.trace[op][-1] == pytest.approx(MIN_INTERVAL, abs=1e-6)
    assert {op for op, _ in node.immediate} == set(OPS)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.one_of(window_counts.map(lambda c: ("quiet", c)), st.just(("fail", None))),
                max_size=30))
def test_policy0_keeps_2000(windows):
    node = FakeNode("policy0")
    for i, (kind, counts) in enumerate(windows, start=1):
        evs = quiet_window(counts, node) if kind == "quiet" else failing_window(node)
        node.window(2000 * i, evs)
    for op in OPS:
        assert set(node.trace[op]) == {2000}
    assert node.immediate == []


def test_error_triggers_one_immediate_run_per_evaluation():
    node = FakeNode("policy1")
    node.window(2000, [(PEER_ACCESS_FAILED, {"role": "finger"})] * 3)
    assert node.immediate == [("fix_next_finger", 2000)]


def test_cursor_window_equals_evaluation_period():
    node = FakeNode("policy1")
    node.window(2000, [(OUTCOME_EVENT["stabilize"], {"outcome": NON_EFFECTIVE})] * 8)
    first = node.intervals["stabilize"]
    # nothing new: NEMO is 0 and the interval holds
    node.window(4000, [])
    assert node.intervals["stabilize"] == first
    assert first == pytest.approx(2000 * (1 + 0.5 / 3))


metric = st.floats(0, 1e6, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(metric, metric, st.floats(0, 100), st.floats(0.01, 100), st.sampled_from([INCREASE, DECREASE]))
def test_interval_monotone_in_metric(a, b, t, k, direction):
    lo, hi = sorted((a, b))
    p = SubPolicyParams(t, k, direction)
    x, y = sub_policy_interval(2000, lo, p), sub_policy_interval(2000, hi, p)
    assert (y >= x) if direction == INCREASE else (y <= x)
    P = p_factor(hi, t, k)
    assert 0 <= P < 1 or (P == 1.0 and (hi - t) / k > 1e15)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 100), st.floats(0.1, 100), st.floats(0, 1000))
def test_p_continuous_above_threshold(t, k, d):
    v = t + d
    eps = 1e-7
    assert abs(p_factor(v + eps, t, k) - p_factor(v, t, k)) <= eps / k + 1e-12
