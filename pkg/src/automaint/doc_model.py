"""Degree-of-concurrency (DOC) layer of a replicated store client.

Closed-form get-time model, EDTT server ranking, FFR/FTV/BN metrics, the DOC
adaptation policy and an event-level simulation of one get request.
Units: sizes in bits, bandwidth in bits/s, latency and times in seconds.
"""

from __future__ import annotations

import heapq
import math
import statistics
from dataclasses import dataclass, field
from typing import Sequence

KBYTE = 1024 * 8  # bits
MBYTE = 1024 * KBYTE


@dataclass(frozen=True)
class DocModelParams:
    S: float
    bw_client: float
    l_client: float
    bw_server: Sequence[float]
    l_server: Sequence[float]
    R: int = 4
    doc: int = 1
    p_failure: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "bw_server", tuple(self.bw_server))
        object.__setattr__(self, "l_server", tuple(self.l_server))
        if len(self.bw_server) != self.R or len(self.l_server) != self.R:
            raise ValueError("need one bandwidth and one latency per replica server")
        if not 1 <= self.doc <= self.R:
            raise ValueError("DOC must lie in [1, R]")
        if self.S <= 0 or self.bw_client <= 0 or min(self.bw_server) <= 0:
            raise ValueError("size and bandwidths must be > 0")
        if not 0 <= self.p_failure < 1:
            raise ValueError("p_failure must lie in [0, 1)")

    @classmethod
    def uniform(cls, S, bw_client, l_client, bw_server, l_server, R=4, **kw):
        return cls(S, bw_client, l_client, [bw_server] * R, [l_server] * R, R=R, **kw)


def fetch_time(p, i, doc=None):
    """Request latency both ways plus server-link and shared client-link transfer."""
    doc = p.doc if doc is None else doc
    return (2 * p.l_client + 2 * p.l_server[i]
            + p.S * (1.0 / p.bw_server[i] + doc / p.bw_client))


def fetch_time_random(p, doc=1):
    """Expected fetch time when the server is chosen uniformly at random."""
    return sum(fetch_time(p, i, doc) for i in range(p.R)) / p.R


def get_time_low_doc(p):
    """Static DOC=1 get time with random server choice and repeated fetches.

    Evaluates t_rnd + sum_{k=1}^{R-1} k * t_rnd * P**k as written.
    """
    t = fetch_time_random(p, 1)
    return t + sum(k * t * p.p_failure ** k for k in range(1, p.R))


def get_time_high_doc(p):
    return min(fetch_time(p, i, p.R) for i in range(p.R))


def get_time_perfect_srm(p):
    return min(fetch_time(p, i, 1) for i in range(p.R))


def get_time_concurrent(p, servers, doc):
    """Fastest of ``doc`` parallel fetches from ``servers`` (no failures)."""
    return min(fetch_time(p, i, doc) for i in servers)


def crossover_p_failure(p, lo=0.0, hi=0.99, tol=1e-12):
    """Smallest failure probability at which the static high DOC wins, or None."""
    high = get_time_high_doc(p)

    def diff(x):
        return get_time_low_doc(_with_p(p, x)) - high

    if diff(lo) >= 0:
        return lo
    if diff(hi) < 0:
        return None
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if diff(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _with_p(p, x):
    return DocModelParams(p.S, p.bw_client, p.l_client, p.bw_server, p.l_server, p.R, p.doc, x)


def monte_carlo_low_doc(p, samples=1_000_000, seed=0):
    """Retry-until-success with at most R attempts, failure only after a full fetch.

    Gets whose R attempts all fail are dropped, as in a truncated expectation.
    """
    import numpy as np

    rng = np.random.default_rng(seed)
    t = fetch_time_random(p, 1)
    fails = rng.geometric(1.0 - p.p_failure, size=samples) - 1 if p.p_failure > 0 else np.zeros(samples, dtype=int)
    cost = np.where(fails <= p.R - 1, (fails + 1) * t, 0.0)
    return float(cost.mean())


# -- server ranking ---------------------------------------------------------

def edtt(latency, size, bandwidth):
    """Expected data transfer time of ``size`` bits over one link."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    if math.isinf(bandwidth):
        return latency
    return latency + size / bandwidth


@dataclass(frozen=True)
class ServerMonitor:
    server: int
    bandwidth: float
    latency: float
    reachable: bool = True


def rank_servers(monitors, size=MBYTE):
    """Ascending EDTT over server-side data; unreachable servers go last."""
    live = [m for m in monitors if m.reachable]
    dead = [m for m in monitors if not m.reachable]
    live.sort(key=lambda m: (edtt(m.latency, size, m.bandwidth), m.server))
    dead.sort(key=lambda m: m.server)
    return [m.server for m in live + dead]


# -- metrics and policy -----------------------------------------------------

@dataclass(frozen=True)
class DocMetrics:
    ffr: float
    ftv: float
    bn: float
    current_doc: int


def extract_doc_metrics(initiated, failed, edtts, client_bw, server_bw, current_doc):
    """FFR, FTV and BN over one observation window, with their empty defaults."""
    ffr = failed / initiated if initiated else 0.0
    ftv = 0.0
    if len(edtts) > 1:
        mu = statistics.fmean(edtts)
        ftv = statistics.pstdev(edtts) / mu if mu > 0 else 0.0
    bn = 1.0
    if client_bw and server_bw:
        bn = statistics.fmean(client_bw) / statistics.fmean(server_bw)
    return DocMetrics(ffr, ftv, bn, current_doc)


@dataclass(frozen=True)
class DocPolicyConfig:
    name: str
    mode: str  # "static" or "autonomic"
    initial_doc: int
    t_ffr: float = 0.1
    t_ftv: float = 0.2
    t_bn: float = 0.8
    eval_interval: float = 60.0
    R: int = 4

    def __post_init__(self):
        if self.mode not in ("static", "autonomic"):
            raise ValueError(f"bad mode {self.mode!r}")
        if min(self.t_ffr, self.t_ftv, self.t_bn) <= 0:
            raise ValueError("thresholds must be > 0")
        if not 1 <= self.initial_doc <= self.R:
            raise ValueError("initial DOC must lie in [1, R]")


DOC_POLICIES = {
    0: DocPolicyConfig("ST_DOC=1", "static", 1),
    1: DocPolicyConfig("ST_DOC=4", "static", 4),
    2: DocPolicyConfig("AM_T_FFR=0.1", "autonomic", 1, t_ffr=0.1),
    3: DocPolicyConfig("AM_T_FFR=0.3", "autonomic", 1, t_ffr=0.3),
    4: DocPolicyConfig("AM_T_FFR=0.5", "autonomic", 1, t_ffr=0.5),
}


def doc_policy_step(m, c):
    doc = m.current_doc
    if not 1 <= doc <= c.R:
        raise ValueError("current DOC outside [1, R]")
    if c.mode == "static":
        return doc
    ffr_high, ftv_high = m.ffr > c.t_ffr, m.ftv > c.t_ftv
    if doc < c.R and ffr_high and ftv_high:
        return c.R
    if doc < c.R and (ffr_high or ftv_high):
        return doc + 1
    if doc > 1 and not ffr_high and not ftv_high:
        if m.bn < c.t_bn:
            return 1
        return doc - 1
    return doc


# -- get request simulation -------------------------------------------------

FETCH_OK, FETCH_FAILED, FETCH_CANCELLED = "ok", "failed", "cancelled"


@dataclass
class GetResult:
    get_time: float
    failed: bool
    bytes: float
    fetches: list = field(default_factory=list)  # (server, status)

    @property
    def initiated(self):
        return len(self.fetches)

    @property
    def fetch_failures(self):
        return sum(1 for _, st in self.fetches if st == FETCH_FAILED)


def simulate_get(issued, ranking, doc, links, S, up, fetch_failure=None):
    """Fetch one replica with ``doc`` concurrent fetches.

    ``links(participant, t)`` gives the link of a participant (-1 = client)
    at time ``t``; ``up(server, t0, t1)`` says whether the server stays on-line
    for the whole fetch.  The first successful fetch wins and the others are
    cancelled.  When every fetch of a round fails, the next ``doc`` servers in
    the ranking are tried.  A fetch from a server that is down, or goes down
    mid-transfer, fails at its nominal completion time.
    """
    if doc < 1:
        raise ValueError("DOC must be >= 1")
    pending = list(ranking)
    start = issued
    total_bits = 0.0
    fetches = []
    while pending:
        round_servers, pending = pending[:doc], pending[doc:]
        client = links(-1, start)
        heap = []
        for srv in round_servers:
            link = links(srv, start)
            dur = (2 * client.latency + 2 * link.latency
                   + S * (1.0 / link.bandwidth + len(round_servers) / client.bandwidth))
            ok = up(srv, start, start + dur)
            if ok and fetch_failure is not None:
                ok = not fetch_failure(srv, start)
            heapq.heappush(heap, (dur, srv, ok))
        end = start
        while heap:
            dur, srv, ok = heapq.heappop(heap)
            if ok:
                fetches.append((srv, FETCH_OK))
                total_bits += S
                for _, other, _ in heap:
                    # a cancelled fetch has moved at most as much as the winner
                    fetches.append((other, FETCH_CANCELLED))
                    total_bits += S
                elapsed = dur if start == issued else start + dur - issued
                return GetResult(elapsed, False, total_bits, fetches)
            fetches.append((srv, FETCH_FAILED))
            total_bits += S
            end = start + dur
        start = end
    return GetResult(start - issued, True, total_bits, fetches)


def closed_form_for(p, ranking, doc):
    """Closed-form get time matching :func:`simulate_get` without failures."""
    return get_time_concurrent(p, ranking[:doc], doc)
