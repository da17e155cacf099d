"""Seeded churn schedules, lookup workloads, trace files and link speeds.

Every generator is a pure function of its parameters and seed.  Durations
are in integer milliseconds for the overlay layer; link latencies are in
seconds and bandwidths in bits per second for the store-client layer.
"""

from __future__ import annotations

import configparser
import hashlib
import math
import random
from dataclasses import dataclass, field, replace
from typing import Optional

MINUTE = 60_000
HOUR = 60 * MINUTE
MBPS = 1_000_000
KBPS = 1_000

CHURN_KINDS = ("low", "high", "locally_varying", "temporally_varying")
WORKLOAD_KINDS = ("light", "heavy", "variable", "trace")
LINK_KINDS = ("server_bottleneck", "client_bottleneck", "none", "temporally_varying")
REPLICATION = 4


class ScenarioError(Exception):
    pass


class TraceFormatError(ScenarioError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def _rng(*parts):
    return random.Random("/".join(str(p) for p in parts))


@dataclass(frozen=True)
class Jittered:
    """A duration drawn uniformly from ``mean - jitter`` to ``mean + jitter``."""

    mean: float
    jitter: float = 0

    def __post_init__(self):
        if self.mean - self.jitter <= 0:
            raise ValueError("durations must stay positive")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")

    def draw(self, rng):
        if math.isinf(self.mean):
            return math.inf
        return int(round(rng.uniform(self.mean - self.jitter, self.mean + self.jitter)))


NEVER = Jittered(math.inf)


@dataclass(frozen=True)
class ChurnPattern:
    kind: str
    low_on: Jittered = NEVER
    low_off: Jittered = Jittered(157_000, 20_000)
    high_on: Jittered = Jittered(200_000, 40_000)
    high_off: Jittered = Jittered(100_000, 20_000)
    low_fraction: float = 0.25
    phase_ms: int = 1_000_000
    initial_on: Optional[Jittered] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CHURN_KINDS:
            raise ValueError(f"unknown churn kind {self.kind!r}")
        if not 0 <= self.low_fraction <= 1:
            raise ValueError("low_fraction must lie in [0, 1]")
        if self.phase_ms <= 0:
            raise ValueError("phase length must be > 0")


def churn_preset(kind, layer="overlay", seed=0):
    """Churn parameters used by the overlay or the store-client experiments."""
    if layer == "overlay":
        return ChurnPattern(kind, seed=seed)
    if layer == "doc":
        # store servers: on 37 +/- 5 s, off 27 +/- 2 s, extra first on-phase 20 +/- 5 s
        return ChurnPattern(
            kind,
            high_on=Jittered(37_000, 5_000),
            high_off=Jittered(27_000, 2_000),
            phase_ms=300_000,
            initial_on=Jittered(20_000, 5_000) if kind != "low" else None,
            seed=seed,
        )
    raise ValueError(f"unknown layer {layer!r}")


def _node_cycles(rng, on, off, horizon, t=0, initial=None):
    out = []
    first = True
    while True:
        d = on.draw(rng)
        if first and initial is not None:
            d += initial.draw(rng)
        first = False
        down = t + d
        if down >= horizon:
            return out
        up = down + off.draw(rng)
        out.append((down, up))
        t = up


def _phased_cycles(rng, p, horizon):
    """Low phases keep the node on-line; high phases cycle with high churn."""
    out = []
    t = 0
    first = True
    while t < horizon:
        phase = t // p.phase_ms
        if phase % 2 == 0:  # low phase
            t = (phase + 1) * p.phase_ms
            continue
        phase_end = (phase + 1) * p.phase_ms
        d = p.high_on.draw(rng)
        if first and p.initial_on is not None:
            d += p.initial_on.draw(rng)
        first = False
        down = t + d
        if down >= horizon:
            break
        if down >= phase_end:
            t = phase_end
            continue
        up = down + p.high_off.draw(rng)
        out.append((down, up))
        t = up
    return out


def build_churn_schedule(pattern, node_ids, horizon):
    """Per-node list of ``(down_at, up_at)`` pairs, all nodes on-line at t=0."""
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    ids = list(node_ids)
    low_nodes = set()
    if pattern.kind == "low":
        low_nodes = set(ids)
    elif pattern.kind == "locally_varying":
        shuffled = sorted(ids)
        _rng(pattern.seed, "local").shuffle(shuffled)
        low_nodes = set(shuffled[: int(round(pattern.low_fraction * len(ids)))])
    sched = {}
    for nid in ids:
        rng = _rng(pattern.seed, "churn", nid)
        if pattern.kind == "temporally_varying":
            sched[nid] = _phased_cycles(rng, pattern, horizon)
        elif nid in low_nodes:
            sched[nid] = _node_cycles(rng, pattern.low_on, pattern.low_off, horizon)
        else:
            sched[nid] = _node_cycles(rng, pattern.high_on, pattern.high_off, horizon,
                                      initial=pattern.initial_on)
    return sched


# -- workloads --------------------------------------------------------------

@dataclass(frozen=True)
class Batch:
    """Keys looked up in parallel.

    The batch is issued at ``max(start + earliest_ms, previous completion +
    gap_ms)``; batches are never issued before their predecessor completes.
    """

    earliest_ms: int
    gap_ms: int
    keys: tuple


@dataclass(frozen=True)
class TraceRecord:
    offset_ms: int
    kind: str
    path_depth: int
    file_id: str


@dataclass(frozen=True)
class Workload:
    kind: str
    count: int = 0
    burst: int = 1
    pause_ms: int = 0
    records: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in WORKLOAD_KINDS:
            raise ValueError(f"unknown workload kind {self.kind!r}")
        if self.kind != "trace" and self.count <= 0:
            raise ValueError("lookup count must be > 0")


def workload_preset(kind, seed=0):
    if kind == "light":
        return Workload("light", count=10, pause_ms=300_000, seed=seed)
    if kind == "heavy":
        return Workload("heavy", count=6000, seed=seed)
    if kind == "variable":
        return Workload("variable", count=1000, burst=100, pause_ms=300_000, seed=seed)
    raise ValueError(f"no preset for workload {kind!r}")


def replica_keys(base, m, replicas=REPLICATION):
    """Keys spread evenly round the ring, one per replica."""
    size = 2 ** m
    step = size // replicas
    return tuple((base + j * step) % size for j in range(replicas))


def _hash_key(text, m):
    digest = hashlib.sha1(text.encode("utf-8")).digest()
    return int.from_bytes(digest, "big") % (2 ** m)


def build_workload(w, m):
    rng = _rng(w.seed, "workload", w.kind)
    size = 2 ** m

    def key():
        return rng.randrange(size)

    if w.kind == "light":
        return [Batch(i * w.pause_ms, 0, (key(),)) for i in range(w.count)]
    if w.kind == "heavy":
        return [Batch(0, 0, (key(),)) for _ in range(w.count)]
    if w.kind == "variable":
        out = []
        for i in range(w.count):
            gap = w.pause_ms if i > 0 and i % w.burst == 0 else 0
            out.append(Batch(0, gap, (key(),)))
        return out
    return trace_batches(w.records, m)


def trace_batches(records, m):
    """Expand trace records into lookup batches.

    Each path element becomes one batch of replica meta-data keys looked up
    in parallel; a data record then looks up its replica data keys one after
    another.
    """
    out = []
    for rec in records:
        for level in range(1, rec.path_depth + 1):
            base = _hash_key(f"meta:{rec.file_id}:{level}", m)
            out.append(Batch(rec.offset_ms, 0, replica_keys(base, m)))
        if rec.kind == "data":
            base = _hash_key(f"data:{rec.file_id}", m)
            for k in replica_keys(base, m):
                out.append(Batch(rec.offset_ms, 0, (k,)))
    return out


def lookup_count(batches):
    return sum(len(b.keys) for b in batches)


def parse_trace_lines(lines):
    records = []
    last = -1
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise TraceFormatError(lineno, f"expected 4 fields, got {len(parts)}")
        try:
            offset, depth = int(parts[0]), int(parts[2])
        except ValueError:
            raise TraceFormatError(lineno, "offset and path depth must be integers") from None
        kind, file_id = parts[1], parts[3]
        if kind not in ("meta", "data"):
            raise TraceFormatError(lineno, f"kind must be meta or data, not {kind!r}")
        if offset < 0 or depth < 1 or not file_id:
            raise TraceFormatError(lineno, "negative offset, depth < 1 or empty file id")
        if offset < last:
            raise TraceFormatError(lineno, f"offset {offset} earlier than previous {last}")
        last = offset
        records.append(TraceRecord(offset, kind, depth, file_id))
    return tuple(records)


def parse_trace_workload(path, seed=0):
    with open(path, encoding="utf-8") as fh:
        return Workload("trace", records=parse_trace_lines(fh), seed=seed)


def generate_trace(n_records, seed=0, mean_gap_ms=2000, depths=(1, 2, 3, 4, 5, 6),
                   depth_weights=(5, 20, 30, 25, 15, 5), data_fraction=0.6, n_files=200):
    """Synthetic file-system-like trace: exponential gaps, weighted path depths."""
    rng = _rng(seed, "trace")
    t = 0
    out = []
    for _ in range(n_records):
        t += int(rng.expovariate(1.0 / mean_gap_ms))
        kind = "data" if rng.random() < data_fraction else "meta"
        depth = rng.choices(depths, weights=depth_weights)[0]
        out.append(TraceRecord(t, kind, depth, f"f{rng.randrange(n_files)}"))
    return tuple(out)


def write_trace(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"{r.offset_ms},{r.kind},{r.path_depth},{r.file_id}\n")


# -- link speeds (store-client layer) ---------------------------------------

@dataclass(frozen=True)
class LinkSpeed:
    bandwidth: float  # bits/s
    latency: float  # seconds

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")
        if self.latency < 0:
            raise ValueError("latency must be >= 0")


STATIC_LINKS = {
    "server_bottleneck": (LinkSpeed(78 * MBPS, 0.0), LinkSpeed(3 * MBPS, 0.020)),
    "client_bottleneck": (LinkSpeed(3 * MBPS, 0.020), LinkSpeed(22 * MBPS, 0.0)),
    "none": (LinkSpeed(18 * MBPS, 0.0), LinkSpeed(18 * MBPS, 0.0)),
}


@dataclass(frozen=True)
class LinkSpeedSchedule:
    """Bandwidth/latency timeline for the client (participant -1) and servers.

    Static kinds keep one value for the whole run.  ``temporally_varying``
    redraws every link each ``period`` seconds with bandwidth in
    [bw_min, bw_max] and a latency that shrinks as bandwidth grows.
    """

    kind: str
    n_servers: int = REPLICATION
    period: float = 10.0
    bw_min: float = 220 * KBPS
    bw_max: float = 22 * MBPS
    lat_max: float = 0.020
    seed: int = 0
    client: Optional[LinkSpeed] = None
    servers: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in LINK_KINDS + ("custom",):
            raise ValueError(f"unknown link kind {self.kind!r}")
        if self.kind in STATIC_LINKS and self.client is None:
            c, s = STATIC_LINKS[self.kind]
            object.__setattr__(self, "client", c)
            object.__setattr__(self, "servers", tuple([s] * self.n_servers))
        if self.kind == "custom" and (self.client is None or len(self.servers) != self.n_servers):
            raise ValueError("custom schedule needs a client link and one link per server")

    @property
    def static(self):
        return self.kind != "temporally_varying"

    def at(self, participant, t):
        """Link of ``participant`` (-1 = client) at time ``t`` seconds."""
        if self.static:
            return self.client if participant == -1 else self.servers[participant]
        idx = int(t // self.period)
        u = _rng(self.seed, "link", participant, idx).random()
        return LinkSpeed(self.bw_min + u * (self.bw_max - self.bw_min), (1.0 - u) * self.lat_max)


def static_links(client, server, n_servers=REPLICATION):
    return LinkSpeedSchedule("custom", n_servers=n_servers, client=client,
                             servers=tuple([server] * n_servers))


# -- scenario configuration files -------------------------------------------

CONFIG_DEFAULTS = {
    "experiment": {
        "layer": "overlay",
        "churn": "low",
        "workload": "heavy",
        "policies": "policy0, policy1, policy2",
        "repetitions": "3",
        "horizon_s": "2400",
        "seed": "1",
        "trace": "",
        "figures": "yes",
    },
    "overlay": {
        "nodes": "16",
        "bits": "32",
        "successor_list": "4",
        "latency_ms": "10",
        "timeout_ms": "500",
        "processing_ms": "5",
        "warmup_s": "60",
        "eval_interval_ms": "2000",
        "initial_interval_ms": "2000",
        "min_interval_ms": "100",
        "window_s": "300",
        "retry_cap": "16",
    },
    "doc": {
        "network": "server_bottleneck",
        "data_kb": "1024",
        "servers": "4",
        "monitor_s": "15",
        "eval_s": "60",
        "noise": "0.05",
        "retry_cap": "16",
        "window_s": "300",
        "reference_mb": "1",
    },
}


def _split(value):
    return [v.strip() for v in value.split(",") if v.strip()]


def load_config(path):
    """Read an INI scenario file into a nested dict with defaults applied.

    List-valued keys (churn, workload, policies) are split on commas.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_dict(CONFIG_DEFAULTS)
    with open(path, encoding="utf-8") as fh:
        try:
            cp.read_file(fh)
        except configparser.Error as exc:
            raise ScenarioError(f"cannot parse {path}: {exc}") from None
    unknown = set(cp.sections()) - set(CONFIG_DEFAULTS)
    if unknown:
        raise ScenarioError(f"unknown sections: {sorted(unknown)}")
    cfg = {s: dict(cp[s]) for s in CONFIG_DEFAULTS}
    exp = cfg["experiment"]
    if exp["layer"] not in ("overlay", "doc"):
        raise ScenarioError(f"layer must be overlay or doc, not {exp['layer']!r}")
    for key in ("churn", "workload", "policies"):
        exp[key] = _split(exp[key])
    try:
        exp["repetitions"] = int(exp["repetitions"])
        exp["horizon_s"] = float(exp["horizon_s"])
        exp["seed"] = int(exp["seed"])
    except ValueError as exc:
        raise ScenarioError(f"bad number in [experiment]: {exc}") from None
    if exp["repetitions"] < 1:
        raise ScenarioError("repetitions must be >= 1")
    exp["figures"] = exp["figures"].lower() in ("yes", "true", "1", "on")
    for c in exp["churn"]:
        if c not in CHURN_KINDS:
            raise ScenarioError(f"unknown churn kind {c!r}")
    for w in exp["workload"]:
        if w not in WORKLOAD_KINDS:
            raise ScenarioError(f"unknown workload kind {w!r}")
        if w == "trace" and not exp["trace"]:
            raise ScenarioError("workload 'trace' needs experiment.trace = <file>")
    if exp["layer"] == "doc" and cfg["doc"]["network"] not in LINK_KINDS:
        raise ScenarioError(f"unknown network kind {cfg['doc']['network']!r}")
    for section in ("overlay", "doc"):
        for k, v in cfg[section].items():
            if k == "network":
                continue
            try:
                cfg[section][k] = float(v)
            except ValueError:
                raise ScenarioError(f"[{section}] {k} must be a number") from None
    return cfg


def with_seed(pattern_or_workload, seed):
    return replace(pattern_or_workload, seed=seed)
