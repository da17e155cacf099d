"""Autonomic maintenance-interval manager.

One manager runs per overlay node.  Each maintenance operation has its own
policy evaluator which, on every evaluation, extracts NEMO/ER/LILT metric
values from the events recorded since its previous evaluation, lets every
sub-policy propose a new interval and applies the mean of the proposals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .gamf import (
    EFFECTOR,
    EVENT_GENERATOR,
    METRIC_EXTRACTOR,
    POLICY_EVALUATOR,
    AdapterDescriptor,
    Event,
    Gamf,
    KnowledgeFilter,
    MetricValue,
    TriggerSpec,
)
from .overlay import (
    FIND_WORKING_SUCCESSOR,
    LOOKUP_COMPLETED,
    NON_EFFECTIVE,
    OPS,
    OUTCOME_EVENT,
    OVERLAY_EVENT_TYPES,
    PEER_ACCESS_FAILED,
)

INCREASE = "increase"
DECREASE = "decrease"
NEMO, ER, LILT = "NEMO", "ER", "LILT"
MIN_INTERVAL = 100


@dataclass(frozen=True)
class SubPolicyParams:
    t: float
    k: float
    direction: str

    def __post_init__(self):
        if not (self.k > 0 or math.isinf(self.k)):
            raise ValueError("k must be positive or infinite")
        if self.t < 0:
            raise ValueError("t must be >= 0")
        if self.direction not in (INCREASE, DECREASE):
            raise ValueError(f"bad direction {self.direction!r}")


def p_factor(value, t, k):
    """Proportion of change; zero at or below the threshold and for k=inf."""
    if value <= t or math.isinf(k):
        return 0.0
    return 1.0 - 1.0 / ((value - t) / k + 1.0)


def sub_policy_interval(current, metric, p, min_interval=MIN_INTERVAL):
    if current <= 0:
        raise ValueError("current interval must be > 0")
    value = metric.value if isinstance(metric, MetricValue) else metric
    P = p_factor(value, p.t, p.k)
    if p.direction == INCREASE:
        new = current + current * P
    else:
        new = current - current * P
    return max(new, min_interval)


def aggregate(responses):
    if not responses:
        raise ValueError("no sub-policy responses")
    return sum(responses) / len(responses)


@dataclass(frozen=True)
class OpPolicyConfig:
    op: str
    sub_policies: tuple
    eval_interval: int = 2000
    initial_interval: int = 2000
    immediate_on_error: bool = True

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown op {self.op!r}")
        if self.op == "check_predecessor" and any(kind == LILT for kind, _ in self.sub_policies):
            raise ValueError("check_predecessor policy cannot use LILT")
        if not self.sub_policies:
            raise ValueError("at least one sub-policy required")

    @property
    def static(self):
        return all(math.isinf(p.k) for _, p in self.sub_policies)


INF = math.inf


def _op_configs(nemo, er, lilt, immediate=True, eval_interval=2000, initial_interval=2000):
    out = {}
    for op in OPS:
        subs = [(NEMO, nemo), (ER, er)]
        if op != "check_predecessor":
            subs.append((LILT, lilt))
        out[op] = OpPolicyConfig(op, tuple(subs), eval_interval, initial_interval, immediate)
    return out


POLICY_PARAMS = {
    "policy0": (
        SubPolicyParams(0, INF, INCREASE),
        SubPolicyParams(0, INF, DECREASE),
        SubPolicyParams(1600, INF, DECREASE),
    ),
    "policy1": (
        SubPolicyParams(0, 8, INCREASE),
        SubPolicyParams(0, 32, DECREASE),
        SubPolicyParams(1600, INF, DECREASE),
    ),
    # aggressive variant; k values are a calibration choice
    "policy2": (
        SubPolicyParams(0, 2, INCREASE),
        SubPolicyParams(0, 8, DECREASE),
        SubPolicyParams(1600, INF, DECREASE),
    ),
}


def policy_set(name, eval_interval=2000, initial_interval=2000, custom=None):
    """Per-op configs for ``policy0``/``policy1``/``policy2`` or ``custom``.

    ``custom`` is a (nemo, er, lilt) triple of :class:`SubPolicyParams`.
    The unmanaged ``policy0`` never schedules immediate maintenance.
    """
    if name == "custom":
        if custom is None:
            raise ValueError("custom policy needs parameters")
        params = tuple(custom)
    elif name in POLICY_PARAMS:
        params = POLICY_PARAMS[name]
    else:
        raise ValueError(f"unknown policy set {name!r}")
    return _op_configs(*params, immediate=name != "policy0",
                       eval_interval=eval_interval, initial_interval=initial_interval)


# -- metric extraction over already-selected records ------------------------

def nemo_value(records, op):
    etype = OUTCOME_EVENT[op]
    return sum(1 for r in records if r.event_type == etype and r.payload.get("outcome") == NON_EFFECTIVE)


ER_ROLE = {"fix_next_finger": "finger", "check_predecessor": "predecessor"}


def er_value(records, op):
    if op == "stabilize":
        return sum(1 for r in records if r.event_type == FIND_WORKING_SUCCESSOR)
    role = ER_ROLE[op]
    return sum(
        1 for r in records if r.event_type == PEER_ACCESS_FAILED and r.payload.get("role") == role
    )


def lilt_value(records):
    times = [float(r.payload["elapsed"]) for r in records if r.event_type == LOOKUP_COMPLETED]
    return sum(times) / len(times) if times else 0.0


METRIC_SOURCES = {
    NEMO: lambda op: frozenset([OUTCOME_EVENT[op]]),
    ER: lambda op: frozenset([FIND_WORKING_SUCCESSOR if op == "stabilize" else PEER_ACCESS_FAILED]),
    LILT: lambda op: frozenset([LOOKUP_COMPLETED]),
}


def _compute(kind, records, op):
    if kind == NEMO:
        return float(nemo_value(records, op))
    if kind == ER:
        return float(er_value(records, op))
    return lilt_value(records)


class MetricExtractor:
    """Turns the events not yet seen by this extractor into one metric value."""

    def __init__(self, gamf, node_id, op, kind):
        self.gamf = gamf
        self.op = op
        self.kind = kind
        self.adapter_id = f"{node_id}.{op}.{kind}"
        self.metric_type = f"{kind}_{op}"
        gamf.register_adapter(
            AdapterDescriptor(self.adapter_id, METRIC_EXTRACTOR, facet=op)
        )

    def extract(self, now):
        recs = self.gamf.query(
            KnowledgeFilter(type_filter=METRIC_SOURCES[self.kind](self.op), consume_since_last=True),
            adapter_id=self.adapter_id,
        )
        mv = MetricValue(self.metric_type, now, _compute(self.kind, recs, self.op))
        self.gamf.record_metric(mv, source=self.adapter_id)
        return mv


def _windowed(gamf, op, kind, window):
    recs = gamf.query(KnowledgeFilter(type_filter=METRIC_SOURCES[kind](op), window=window, kind="event"))
    ts = int(window[1]) if math.isfinite(window[1]) else gamf.now
    return MetricValue(f"{kind}_{op}", ts, _compute(kind, recs, op), {"n": len(recs)})


def extract_nemo(gamf, op, window):
    """Non-effective executions of ``op`` with timestamps in ``window``."""
    return _windowed(gamf, op, NEMO, window)


def extract_er(gamf, op, window):
    return _windowed(gamf, op, ER, window)


def extract_lilt(gamf, window):
    """Mean completion time of successful local lookups; 0 when there were none."""
    mv = _windowed(gamf, "stabilize", LILT, window)
    return MetricValue(LILT, mv.timestamp, mv.value, mv.info)


@dataclass
class Decision:
    time: int
    op: str
    interval: float
    metrics: dict
    immediate: bool


class NodeManager:
    """Autonomic manager for one node, wired into its own :class:`Gamf`.

    ``get_interval(op)`` reads the current interval; ``apply(op, interval,
    immediate, now)`` is the effector writing it back to the node.
    """

    def __init__(self, node_id, configs, get_interval, apply, gamf=None,
                 start=0, min_interval=MIN_INTERVAL):
        self.node_id = node_id
        self.gamf = gamf or Gamf()
        self.configs = configs
        self.get_interval = get_interval
        self.apply = apply
        self.min_interval = min_interval
        self.decisions = []
        self.generator_id = f"{node_id}.events"
        self.gamf.register_adapter(
            AdapterDescriptor(self.generator_id, EVENT_GENERATOR, facet="overlay",
                              claimed_event_types=OVERLAY_EVENT_TYPES, protected=True)
        )
        self.effector_id = f"{node_id}.effector"
        self.gamf.register_adapter(AdapterDescriptor(self.effector_id, EFFECTOR, facet="overlay"))
        self.extractors = {}
        for op, cfg in configs.items():
            self.extractors[op] = [
                (kind, params, MetricExtractor(self.gamf, node_id, op, kind))
                for kind, params in cfg.sub_policies
            ]
            self.gamf.register_adapter(
                AdapterDescriptor(f"{node_id}.{op}.policy", POLICY_EVALUATOR, facet=op),
                TriggerSpec.periodic(cfg.eval_interval, start=start),
                self._evaluator(op),
            )

    def record(self, event_type, t, payload):
        self.gamf.record_event(Event(event_type, t, payload), source=self.generator_id)

    def _evaluator(self, op):
        def evaluate(gamf, now):
            self.evaluate(op, now)
        return evaluate

    def evaluate(self, op, now):
        cfg = self.configs[op]
        current = self.get_interval(op)
        responses, metrics = [], {}
        error_seen = False
        for kind, params, ext in self.extractors[op]:
            mv = ext.extract(now)
            metrics[kind] = mv.value
            if kind == ER and mv.value > 0:
                error_seen = True
            responses.append(sub_policy_interval(current, mv, params, self.min_interval))
        new = aggregate(responses)
        immediate = error_seen and cfg.immediate_on_error
        self.decisions.append(Decision(now, op, new, metrics, immediate))
        self.apply(op, new, immediate, now)
        return new
