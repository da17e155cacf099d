"""Simulation drivers for single experiment cells.

:func:`run_overlay` runs one overlay of managed (or unmanaged) nodes under a
churn schedule while a gateway issues the workload.  :func:`run_doc` runs one
store client fetching replicas from churning servers while its DOC is
managed by a policy.
"""

from __future__ import annotations

import math
import random
import statistics
from dataclasses import dataclass, field
from typing import Optional

from . import analytics
from .doc_model import (
    DOC_POLICIES,
    FETCH_CANCELLED,
    FETCH_OK,
    KBYTE,
    MBYTE,
    ServerMonitor,
    doc_policy_step,
    edtt,
    extract_doc_metrics,
    rank_servers,
    simulate_get,
)
from .gamf import (
    EVENT_GENERATOR,
    POLICY_EVALUATOR,
    AdapterDescriptor,
    Event,
    Gamf,
    KnowledgeFilter,
    TriggerSpec,
)
from .kernel import Kernel
from .manager import NodeManager, policy_set
from .overlay import OPS, Overlay
from .scenario import (
    LinkSpeedSchedule,
    build_churn_schedule,
    build_workload,
)


def _rng(*parts):
    return random.Random("/".join(str(p) for p in parts))


# -- overlay ----------------------------------------------------------------

@dataclass(frozen=True)
class OverlayParams:
    nodes: int = 16
    m: int = 32
    successor_list: int = 4
    latency: int = 10
    timeout: int = 500
    processing: int = 5
    warmup_ms: int = 60_000
    horizon_ms: int = 2_400_000
    eval_interval: int = 2000
    initial_interval: int = 2000
    min_interval: int = 100
    window_ms: int = analytics.WINDOW_MS
    retry_cap: int = analytics.RETRY_CAP
    join_retry_ms: int = 10_000
    join_spacing_ms: int = 1000
    sample_ms: int = 10_000
    ring_walk_ms: int = 50_000

    def __post_init__(self):
        if self.nodes < 1:
            raise ValueError("need at least one node")
        if self.horizon_ms <= 0:
            raise ValueError("horizon must be > 0")
        if self.warmup_ms < self.join_spacing_ms * (self.nodes - 1):
            raise ValueError("warm-up too short for staggered joins")


@dataclass
class OverlayRun:
    policy: str
    seed: int
    node_ids: list
    gateway: int
    lookups: list
    traffic: list
    interval_rows: list  # (time, node, op, interval)
    samples: list  # (time, op, mean interval over live nodes)
    ring_walks: list  # (time, reachable, live)
    workload_start: int
    workload_end: int
    end: int
    windows: list = field(default_factory=list)
    overlay: Optional[Overlay] = None

    def nus(self):
        return [w.nu for w in self.windows]

    def elts(self):
        return [w.elt for w in self.windows]


class _NodeRuntime:
    __slots__ = ("incarnation", "manager", "tokens", "last_run", "wanted")

    def __init__(self):
        self.incarnation = 0
        self.manager = None
        self.tokens = {}
        self.last_run = {}
        self.wanted = True


def node_ids_for(n, m, seed):
    return sorted(_rng(seed, "ids").sample(range(2 ** m), n))


def run_overlay(params, policy, churn, workload, seed=0, managed=True):
    """Run one cell.  ``policy`` names a policy set; ``managed=False`` omits
    the manager entirely (intervals stay at their initial value)."""
    p = params
    kernel = Kernel()
    ids = node_ids_for(p.nodes, p.m, seed)
    gateway = ids[0]
    rt = {nid: _NodeRuntime() for nid in ids}
    configs = policy_set(policy, p.eval_interval, p.initial_interval) if managed else None
    interval_rows = []

    def sink(nid, event_type, t, payload):
        mgr = rt[nid].manager
        if mgr is not None:
            mgr.record(event_type, t, {k: str(v) for k, v in payload.items()})

    ov = Overlay(m=p.m, successor_list_len=p.successor_list, latency=p.latency,
                 timeout=p.timeout, processing=p.processing,
                 initial_interval=p.initial_interval, sink=sink)

    def schedule_op(nid, inc, op, at):
        r = rt[nid]
        r.tokens[op] = kernel.schedule(at, periodic_op, nid, inc, op)

    def periodic_op(nid, inc, op):
        r = rt[nid]
        if r.incarnation != inc or not ov.alive(nid):
            return
        now = kernel.now
        r.last_run[op] = now
        ov.run_op(op, nid, now)
        schedule_op(nid, inc, op, now + int(round(ov.nodes[nid].intervals[op])))

    def immediate_op(nid, inc, op):
        if rt[nid].incarnation == inc and ov.alive(nid):
            ov.run_op(op, nid, kernel.now)

    def make_apply(nid, inc):
        def apply(op, interval, immediate, now):
            r = rt[nid]
            if r.incarnation != inc or not ov.alive(nid):
                return
            state = ov.nodes[nid]
            if interval != state.intervals[op]:
                state.intervals[op] = interval
                interval_rows.append((now, nid, op, interval))
                kernel.cancel(r.tokens[op])
                at = max(now, r.last_run[op] + int(round(interval)))
                schedule_op(nid, inc, op, at)
            if immediate:
                kernel.schedule(now, immediate_op, nid, inc, op)
        return apply

    def tick(nid, inc):
        r = rt[nid]
        if r.incarnation != inc or not ov.alive(nid):
            return
        r.manager.gamf.advance(kernel.now)
        kernel.schedule(r.manager.gamf.next_due(), tick, nid, inc)

    def start_maintenance(nid, t):
        r = rt[nid]
        r.incarnation += 1
        inc = r.incarnation
        state = ov.nodes[nid]
        for op in OPS:
            interval_rows.append((t, nid, op, state.intervals[op]))
        if configs is not None:
            r.manager = NodeManager(
                nid, configs, lambda op: ov.nodes[nid].intervals[op], make_apply(nid, inc),
                gamf=Gamf(), start=t, min_interval=p.min_interval,
            )
            kernel.schedule(r.manager.gamf.next_due(), tick, nid, inc)
        phase = _rng(seed, "phase", nid, inc)
        for op in OPS:
            first = t + phase.randrange(1, int(state.intervals[op]) + 1)
            r.last_run[op] = t
            schedule_op(nid, inc, op, first)

    def bring_up(nid, wanted_inc):
        r = rt[nid]
        if not r.wanted or r.incarnation != wanted_inc:
            return
        now = kernel.now
        if nid == gateway or not ov.alive(gateway):
            ov.create(nid)
            ok = True
        else:
            r.manager = None
            ok = ov.join(nid, gateway, now)
        if ok:
            start_maintenance(nid, now)
        else:
            kernel.schedule(now + p.join_retry_ms, bring_up, nid, wanted_inc)

    def go_down(nid):
        r = rt[nid]
        r.wanted = False
        r.incarnation += 1
        r.manager = None
        if nid in ov.nodes:
            ov.kill(nid)

    def come_up(nid):
        r = rt[nid]
        r.wanted = True
        r.incarnation += 1
        bring_up(nid, r.incarnation)

    for i, nid in enumerate(ids):
        kernel.schedule(i * p.join_spacing_ms, bring_up, nid, 0)

    sched = build_churn_schedule(churn, ids[1:], p.horizon_ms)
    for nid in ids[1:]:
        for down, up in sched[nid]:
            kernel.schedule(p.warmup_ms + down, go_down, nid)
            if math.isfinite(up):
                kernel.schedule(p.warmup_ms + up, come_up, nid)

    batches = build_workload(workload, p.m)
    lookups = []
    wl = {"end": p.warmup_ms, "done": not batches}

    def issue(i, start):
        now = kernel.now
        b = batches[i]
        finish = now
        for key in b.keys:
            res = ov.lookup(gateway, key, now)
            lookups.append(analytics.LookupRecord(now, not res.failed, max(res.elapsed, 1)))
            finish = max(finish, now + res.elapsed)
        wl["end"] = max(wl["end"], finish)
        if i + 1 == len(batches):
            wl["done"] = True
            return
        nb = batches[i + 1]
        kernel.schedule(max(start + nb.earliest_ms, finish + nb.gap_ms), issue, i + 1, start)

    if batches:
        kernel.schedule(p.warmup_ms + batches[0].earliest_ms, issue, 0, p.warmup_ms)

    samples, walks = [], []

    def sample():
        now = kernel.now
        live = [n for n in ids if ov.alive(n)]
        for op in OPS:
            vals = [ov.nodes[n].intervals[op] for n in live]
            samples.append((now, op, statistics.fmean(vals) if vals else math.nan))
        kernel.schedule(now + p.sample_ms, sample)

    def walk():
        now = kernel.now
        if ov.alive(gateway):
            walks.append((now, ov.ring_walk(gateway), len(ov.live_ids())))
        kernel.schedule(now + p.ring_walk_ms, walk)

    kernel.schedule(0, sample)
    kernel.schedule(p.warmup_ms, walk)

    end = p.warmup_ms + p.horizon_ms
    kernel.run(until=end)
    if not wl["done"]:
        kernel.run(stop=lambda: wl["done"])
    # keep running until the window holding the last lookup is complete
    n_windows = max(1, math.ceil((wl["end"] - p.warmup_ms) / p.window_ms))
    ulm_end = p.warmup_ms + n_windows * p.window_ms
    kernel.run(until=max(ulm_end, kernel.now))
    end = max(end, kernel.now)

    run = OverlayRun(policy, seed, ids, gateway, lookups, ov.traffic, interval_rows,
                     samples, walks, p.warmup_ms, wl["end"], end, overlay=ov)
    in_period = [(t, b) for t, b in ov.traffic if p.warmup_ms <= t < ulm_end]
    run.windows = analytics.window_aggregate(lookups, in_period, p.window_ms,
                                             p.warmup_ms, p.retry_cap)
    return run


# -- store client (DOC) -----------------------------------------------------

@dataclass(frozen=True)
class DocParams:
    servers: int = 4
    data_kb: float = 1024
    monitor_s: float = 15.0
    eval_s: float = 60.0
    noise: float = 0.05
    reference_mb: float = 1.0
    window_s: float = 300.0
    retry_cap: int = analytics.RETRY_CAP
    horizon_s: float = 2400.0
    initial_doc: Optional[int] = None

    def __post_init__(self):
        if self.servers < 1 or self.data_kb <= 0:
            raise ValueError("need >= 1 server and a positive data size")
        if not 0 <= self.noise < 1:
            raise ValueError("noise must lie in [0, 1)")


@dataclass(frozen=True)
class DocWorkload:
    kind: str
    count: int
    burst: int
    pause_s: float


DOC_WORKLOADS = {
    "heavy": DocWorkload("heavy", 300, 300, 0.0),
    "light": DocWorkload("light", 10, 1, 120.0),
    "variable": DocWorkload("variable", 30, 3, 120.0),
}


@dataclass
class GetRecord:
    issued: float
    doc: int
    get_time: float
    failed: bool


@dataclass
class DocRun:
    policy: str
    seed: int
    gets: list
    doc_trace: list  # (time s, doc)
    metrics: list  # (time s, DocMetrics)
    bytes_log: list  # (time s, bytes)
    end: float
    windows: list = field(default_factory=list)

    def egts(self):
        return [w.elt for w in self.windows]


MONITOR_EVENT = "server_monitor"
CLIENT_MONITOR_EVENT = "client_monitor"
FETCH_EVENT = "fetch_outcome"
DOC_EVENTS = frozenset([MONITOR_EVENT, CLIENT_MONITOR_EVENT, FETCH_EVENT])


def _ms(t):
    return int(round(t * 1000))


def doc_policy(name):
    """``policy<k>`` or a bare index into the DOC policy table."""
    key = name[len("policy"):] if name.startswith("policy") else name
    try:
        return DOC_POLICIES[int(key)]
    except (ValueError, KeyError):
        raise ValueError(f"unknown DOC policy {name!r}") from None


def run_doc(params, policy, churn, network, workload, seed=0):
    """One store-client run, from the first get until the last completes.

    ``network`` is a link kind or a schedule.  Server churn is generated up to
    ``horizon_s``; servers stay on-line after that.
    """
    p = params
    cfg = doc_policy(policy) if isinstance(policy, str) else policy
    if isinstance(network, LinkSpeedSchedule):
        links = network
    else:
        links = LinkSpeedSchedule(network, n_servers=p.servers, seed=seed)
    wl = DOC_WORKLOADS[workload] if isinstance(workload, str) else workload
    size = p.data_kb * KBYTE
    ref = p.reference_mb * MBYTE
    sched = build_churn_schedule(churn, range(p.servers), _ms(p.horizon_s))
    down = {s: [(d / 1000, u / 1000) for d, u in sched[s]] for s in range(p.servers)}

    def up_at(s, t):
        return not any(d <= t < u for d, u in down[s])

    def up_during(s, t0, t1):
        return not any(d < t1 and u > t0 for d, u in down[s])

    kernel = Kernel()
    gamf = Gamf()
    gamf.register_adapter(AdapterDescriptor("client.events", EVENT_GENERATOR, facet="store",
                                            claimed_event_types=DOC_EVENTS, protected=True))
    noise = _rng(seed, "noise")
    state = {"doc": cfg.initial_doc if p.initial_doc is None else p.initial_doc,
             "monitors": [ServerMonitor(s, links.at(s, 0).bandwidth, links.at(s, 0).latency)
                          for s in range(p.servers)]}
    doc_trace = [(0.0, state["doc"])]
    metrics_log = []
    gets, bytes_log = [], []

    def jitter(x):
        return x * (1 + noise.uniform(-p.noise, p.noise))

    def record(etype, t, payload):
        gamf.record_event(Event(etype, _ms(t), {k: str(v) for k, v in payload.items()}),
                          source="client.events")

    def monitor():
        t = kernel.now
        mons = []
        for s in range(p.servers):
            link = links.at(s, t)
            reach = up_at(s, t)
            bw, lat = jitter(link.bandwidth), jitter(link.latency)
            mons.append(ServerMonitor(s, bw, lat, reach))
            if reach:
                record(MONITOR_EVENT, t, {"server": s, "bw": bw, "edtt": edtt(lat, ref, bw)})
        client = links.at(-1, t)
        record(CLIENT_MONITOR_EVENT, t, {"bw": jitter(client.bandwidth)})
        state["monitors"] = mons
        kernel.schedule(t + p.monitor_s, monitor)

    def evaluate(g, now_ms):
        recs = g.query(KnowledgeFilter(type_filter=DOC_EVENTS, consume_since_last=True),
                       adapter_id="client.doc.policy")
        fetches = [r for r in recs if r.event_type == FETCH_EVENT]
        failed = sum(1 for r in fetches if r.payload["ok"] == "0")
        edtts = [float(r.payload["edtt"]) for r in recs if r.event_type == MONITOR_EVENT]
        sbw = [float(r.payload["bw"]) for r in recs if r.event_type == MONITOR_EVENT]
        cbw = [float(r.payload["bw"]) for r in recs if r.event_type == CLIENT_MONITOR_EVENT]
        m = extract_doc_metrics(len(fetches), failed, edtts, cbw, sbw, state["doc"])
        new = doc_policy_step(m, cfg)
        metrics_log.append((now_ms / 1000, m))
        if new != state["doc"]:
            state["doc"] = new
            doc_trace.append((now_ms / 1000, new))

    gamf.register_adapter(AdapterDescriptor("client.doc.policy", POLICY_EVALUATOR, facet="store"),
                          TriggerSpec.periodic(_ms(p.eval_s)),
                          evaluate)

    def tick():
        gamf.advance(_ms(kernel.now))
        kernel.schedule(gamf.next_due() / 1000, tick)

    done = {"flag": wl.count == 0}

    def issue(i):
        t = kernel.now
        doc = state["doc"]
        ranking = rank_servers(state["monitors"], ref)
        res = simulate_get(t, ranking, doc, links.at, size, up_during)
        for srv, status in res.fetches:
            if status != FETCH_CANCELLED:
                record(FETCH_EVENT, t + res.get_time, {"server": srv, "ok": int(status == FETCH_OK)})
        gets.append(GetRecord(t, doc, res.get_time, res.failed))
        bytes_log.append((t + res.get_time, res.bytes))
        if i + 1 >= wl.count:
            done["flag"] = True
            return
        gap = wl.pause_s if (i + 1) % wl.burst == 0 else 0.0
        kernel.schedule(t + res.get_time + gap, issue, i + 1)

    kernel.schedule(0.0, monitor)
    kernel.schedule(gamf.next_due() / 1000, tick)
    if wl.count:
        kernel.schedule(0.0, issue, 0)
    # the client is only observed while it has gets to serve
    kernel.run(stop=lambda: done["flag"])
    end = max([kernel.now] + [g.issued + g.get_time for g in gets])
    run = DocRun(cfg.name, seed, gets, doc_trace, metrics_log, bytes_log, end)
    run.windows = doc_windows(gets, bytes_log, p.window_s, p.retry_cap)
    return run


def doc_windows(gets, bytes_log, width_s, retry_cap):
    """Expected get time per window, reusing the lookup-time aggregation in ms."""
    recs = [analytics.LookupRecord(_ms(g.issued), not g.failed, max(g.get_time * 1000, 1e-6))
            for g in gets]
    traffic = [(_ms(t), b / 8) for t, b in bytes_log]
    return analytics.window_aggregate(recs, traffic, _ms(width_s), 0, retry_cap)

