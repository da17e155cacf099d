"""Simulated Chord-style overlay with per-message byte and latency accounting.

All operations are synchronous: they read the overlay state at the instant
they are called and return how long they would have taken.  Message timing
uses a per-node processing queue (``busy_until``) so that maintenance
traffic delays concurrent lookups.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

OPS = ("stabilize", "fix_next_finger", "check_predecessor")

EFFECTIVE = "effective"
NON_EFFECTIVE = "non_effective"
ACCESS_FAILED = "access_failed"

# event types emitted to the per-node sink
OUTCOME_EVENT = {op: f"{op}_outcome" for op in OPS}
PEER_ACCESS_FAILED = "peer_access_failed"
FIND_WORKING_SUCCESSOR = "find_working_successor"
LOOKUP_COMPLETED = "lookup_completed"
LOOKUP_FAILED = "lookup_failed"
JOIN_FAILED = "join_failed"
OVERLAY_EVENT_TYPES = frozenset(
    list(OUTCOME_EVENT.values())
    + [PEER_ACCESS_FAILED, FIND_WORKING_SUCCESSOR, LOOKUP_COMPLETED, LOOKUP_FAILED, JOIN_FAILED]
)

HEADER_BYTES = 64
DESCRIPTOR_BYTES = 16


class OverlayError(Exception):
    pass


def msg_size(descriptors=0):
    return HEADER_BYTES + DESCRIPTOR_BYTES * descriptors


def in_half_open(x, a, b):
    """True iff ``x`` lies in the ring interval (a, b]; (a, a] is the whole ring."""
    if a == b:
        return True
    if a < b:
        return a < x <= b
    return x > a or x <= b


def in_open(x, a, b):
    """True iff ``x`` lies in the ring interval (a, b); (a, a) is the ring minus a."""
    if a == b:
        return x != a
    if a < b:
        return a < x < b
    return x > a or x < b


def ring_key(value, m):
    if not 0 <= value < 2 ** m:
        raise ValueError(f"key {value} outside [0, 2^{m})")
    return value


def brute_force_successor(ids, key):
    """Owner of ``key`` among ``ids``: first id >= key, wrapping around."""
    ordered = sorted(ids)
    for i in ordered:
        if i >= key:
            return i
    return ordered[0]


@dataclass
class PeerSet:
    successor: int
    successor_list: list
    predecessor: Optional[int]
    fingers: list
    next_finger: int = 0


@dataclass
class NodeState:
    id: int
    alive: bool
    peers: PeerSet
    intervals: dict
    bytes_sent: int = 0
    busy_until: int = 0


@dataclass(frozen=True)
class LookupResult:
    result: Optional[int]
    hops: int
    elapsed: int
    failed: bool = False


@dataclass
class Overlay:
    m: int = 32
    successor_list_len: int = 4
    latency: int = 10
    timeout: int = 500
    processing: int = 0
    initial_interval: int = 2000
    max_hops: int = 64
    sink: Optional[Callable] = None
    nodes: dict = field(default_factory=dict)
    traffic: list = field(default_factory=list)

    # -- membership ---------------------------------------------------

    def _fresh_state(self, nid):
        return NodeState(
            id=nid,
            alive=True,
            peers=PeerSet(nid, [], None, [None] * self.m),
            intervals={op: self.initial_interval for op in OPS},
        )

    def create(self, nid):
        """Add ``nid`` as a live single-node ring."""
        ring_key(nid, self.m)
        if nid in self.nodes and self.nodes[nid].alive:
            raise OverlayError(f"node {nid} already alive")
        old = self.nodes.get(nid)
        state = self._fresh_state(nid)
        if old is not None:
            state.bytes_sent = old.bytes_sent
            state.busy_until = old.busy_until
        self.nodes[nid] = state
        return state

    def kill(self, nid):
        self.nodes[nid].alive = False

    def alive(self, nid):
        node = self.nodes.get(nid)
        return node is not None and node.alive

    def live_ids(self):
        return sorted(n for n, s in self.nodes.items() if s.alive)

    def join(self, nid, known, now):
        """Join ``nid`` through ``known``; returns False if the node stays out.

        The node's peer set and maintenance intervals start from scratch.
        """
        if not self.alive(known):
            raise OverlayError(f"known node {known} is not alive")
        n = self.create(nid)
        # the owner of nid+1 is our successor; asking for nid itself could
        # return a stale entry for this very node
        res = self.lookup(nid, (nid + 1) % (2 ** self.m), now, via=known)
        ok = not res.failed and res.result != nid
        if ok:
            # fetch the new successor's list to seed our own
            _, ok = self._rpc(n, res.result, now + res.elapsed, 0, self.successor_list_len)
            if ok:
                n.peers.successor = res.result
                n.peers.successor_list = self._list_from(nid, res.result)
        if not ok:
            n.alive = False
            self._emit(nid, JOIN_FAILED, now + res.elapsed, {"via": known})
            return False
        return True

    # -- messaging ----------------------------------------------------

    def _emit(self, nid, event_type, t, payload):
        if self.sink is not None:
            self.sink(nid, event_type, t, payload)

    def _charge(self, node, t, nbytes):
        node.bytes_sent += nbytes
        self.traffic.append((t, nbytes))

    def _local(self, node, t):
        start = max(t, node.busy_until)
        node.busy_until = start + self.processing
        return start + self.processing

    def _rpc(self, src, dst_id, t, req_desc, resp_desc):
        """Request/response from ``src`` to ``dst_id`` sent at ``t``.

        Returns (time the reply arrives or the timeout expires, success).
        """
        self._charge(src, t, msg_size(req_desc))
        dst = self.nodes.get(dst_id)
        if dst is None or not dst.alive:
            return t + self.timeout, False
        arrive = t + self.latency
        done = self._local(dst, arrive)
        self._charge(dst, done, msg_size(resp_desc))
        return done + self.latency, True

    # -- routing ------------------------------------------------------

    def _closest_preceding(self, node, key):
        best, best_dist, role = node.id, 0, None
        size = 2 ** self.m
        cands = [(f, "finger") for f in reversed(node.peers.fingers) if f is not None]
        cands += [(s, "successor") for s in node.peers.successor_list]
        for cand, r in cands:
            if in_open(cand, node.id, key):
                d = (cand - node.id) % size
                if d > best_dist:
                    best, best_dist, role = cand, d, r
        return best, role

    def _route_step(self, node, key):
        succ = node.peers.successor
        if in_half_open(key, node.id, succ):
            return succ, None, True
        nxt, role = self._closest_preceding(node, key)
        if nxt == node.id:
            return succ, None, True
        return nxt, role, False

    def lookup(self, origin, key, now, via=None):
        """Iterative lookup of ``key`` driven by ``origin``.

        Contacting a dead node ends the lookup as failed after one timeout;
        there is no fall-back to alternative peers.
        """
        o = self.nodes.get(origin)
        if o is None or not o.alive:
            raise OverlayError(f"lookup origin {origin} is not alive")
        t = self._local(o, now)
        hops = 0
        if via is None:
            nxt, role, done = self._route_step(o, key)
            if done:
                return self._finish(origin, now, t, nxt, 0)
            if nxt == o.peers.successor:
                role = "successor"
            else:
                role = "finger"
        else:
            nxt, role = via, "bootstrap"
        while True:
            if hops >= self.max_hops:
                return self._fail(origin, now, t, hops, None, "loop")
            t, ok = self._rpc(o, nxt, t, 1, 1)
            hops += 1
            if not ok:
                return self._fail(origin, now, t, hops, nxt, role)
            result, _, done = self._route_step(self.nodes[nxt], key)
            if done:
                return self._finish(origin, now, t, result, hops)
            nxt, role = result, "finger"

    def _finish(self, origin, now, t, result, hops):
        elapsed = t - now
        self._emit(origin, LOOKUP_COMPLETED, t, {"elapsed": elapsed, "hops": hops})
        return LookupResult(result, hops, elapsed)

    def _fail(self, origin, now, t, hops, peer, role):
        elapsed = t - now
        if peer is not None:
            self._emit(origin, PEER_ACCESS_FAILED, t, {"peer": peer, "role": role})
        self._emit(origin, LOOKUP_FAILED, t, {"elapsed": elapsed, "hops": hops})
        if role == "successor":
            self.find_working_successor(origin, t)
        return LookupResult(None, hops, elapsed, failed=True)

    # -- maintenance --------------------------------------------------

    def _list_from(self, nid, succ):
        out = [succ]
        for s in self.nodes[succ].peers.successor_list:
            if s != nid and s not in out:
                out.append(s)
        return out[: self.successor_list_len]

    def _outcome(self, nid, op, t, outcome):
        self._emit(nid, OUTCOME_EVENT[op], t, {"outcome": outcome})
        return outcome

    def find_working_successor(self, nid, now):
        """Replace a dead successor with the first live successor-list entry."""
        n = self.nodes[nid]
        self._emit(nid, FIND_WORKING_SUCCESSOR, now, {"dead": n.peers.successor})
        t = now
        dead = n.peers.successor
        cands = [s for s in n.peers.successor_list if s != dead and s != nid]
        cands += [f for f in n.peers.fingers if f is not None and f not in cands and f != dead and f != nid]
        for cand in cands:
            t, ok = self._rpc(n, cand, t, 0, 0)
            if ok:
                n.peers.successor = cand
                rest = [s for s in n.peers.successor_list if s not in (dead,)]
                if cand in rest:
                    rest = rest[rest.index(cand):]
                else:
                    rest = [cand]
                n.peers.successor_list = rest
                return cand
        n.peers.successor = nid
        n.peers.successor_list = []
        return nid

    def stabilize(self, nid, now):
        n = self.nodes[nid]
        if not n.alive:
            raise OverlayError(f"node {nid} is not alive")
        ps = n.peers
        old_succ, old_list = ps.successor, list(ps.successor_list)
        t = self._local(n, now)
        s = ps.successor
        if s != nid:
            t, ok = self._rpc(n, s, t, 0, 1)
            if not ok:
                self._emit(nid, PEER_ACCESS_FAILED, t, {"peer": s, "role": "successor"})
                self.find_working_successor(nid, t)
                return self._outcome(nid, "stabilize", now, ACCESS_FAILED)
        x = self.nodes[s].peers.predecessor
        if x is not None and x != nid and in_open(x, nid, s) and self.alive(x):
            s = x
        if s != nid:
            t, ok = self._rpc(n, s, t, 1, 0)  # notify
            if not ok:
                return self._outcome(nid, "stabilize", now, ACCESS_FAILED)
            self._notify(s, nid)
            t, ok = self._rpc(n, s, t, 0, self.successor_list_len)
            if not ok:
                return self._outcome(nid, "stabilize", now, ACCESS_FAILED)
            new_list = self._list_from(nid, s)
        else:
            new_list = []
        ps.successor = s
        ps.successor_list = new_list
        changed = s != old_succ or new_list != old_list
        return self._outcome(nid, "stabilize", now, EFFECTIVE if changed else NON_EFFECTIVE)

    def _notify(self, target, candidate):
        ps = self.nodes[target].peers
        if ps.predecessor is None or in_open(candidate, ps.predecessor, target):
            ps.predecessor = candidate

    def fix_next_finger(self, nid, now):
        n = self.nodes[nid]
        if not n.alive:
            raise OverlayError(f"node {nid} is not alive")
        i = n.peers.next_finger
        n.peers.next_finger = (i + 1) % self.m
        target = (nid + 2 ** i) % (2 ** self.m)
        res = self.lookup(nid, target, now)
        if res.failed:
            return self._outcome(nid, "fix_next_finger", now, ACCESS_FAILED)
        if n.peers.fingers[i] != res.result:
            n.peers.fingers[i] = res.result
            return self._outcome(nid, "fix_next_finger", now, EFFECTIVE)
        return self._outcome(nid, "fix_next_finger", now, NON_EFFECTIVE)

    def check_predecessor(self, nid, now):
        n = self.nodes[nid]
        if not n.alive:
            raise OverlayError(f"node {nid} is not alive")
        p = n.peers.predecessor
        if p is None or p == nid:
            return self._outcome(nid, "check_predecessor", now, NON_EFFECTIVE)
        t = self._local(n, now)
        t, ok = self._rpc(n, p, t, 0, 0)
        if ok:
            return self._outcome(nid, "check_predecessor", now, NON_EFFECTIVE)
        self._emit(nid, PEER_ACCESS_FAILED, t, {"peer": p, "role": "predecessor"})
        n.peers.predecessor = None
        return self._outcome(nid, "check_predecessor", now, EFFECTIVE)

    def run_op(self, op, nid, now):
        return getattr(self, op)(nid, now)

    # -- inspection ---------------------------------------------------

    def ring_walk(self, gateway):
        """Count nodes reachable by following successor pointers from ``gateway``."""
        if not self.alive(gateway):
            raise OverlayError(f"gateway {gateway} is not alive")
        seen = {gateway}
        cur = self.nodes[gateway].peers.successor
        while cur != gateway and cur not in seen and self.alive(cur):
            seen.add(cur)
            cur = self.nodes[cur].peers.successor
        return len(seen)

    def total_bytes(self):
        return sum(s.bytes_sent for s in self.nodes.values())

    def ground_truth(self, nid):
        """Peer set a converged ring would give ``nid``, from the sorted live ids."""
        ids = self.live_ids()
        size = 2 ** self.m
        succ = brute_force_successor(ids, (nid + 1) % size)
        ordered = sorted(ids)
        pos = ordered.index(nid)
        pred = ordered[pos - 1]
        succ_list = []
        for k in range(1, len(ordered)):
            s = ordered[(pos + k) % len(ordered)]
            if s == nid:
                break
            succ_list.append(s)
        succ_list = succ_list[: self.successor_list_len]
        fingers = [brute_force_successor(ids, (nid + 2 ** i) % size) for i in range(self.m)]
        if len(ids) == 1:
            return PeerSet(nid, [], None, fingers)
        return PeerSet(succ, succ_list, pred, fingers)

    def snapshot_lines(self):
        """One ``id,alive,successor,predecessor,finger0..`` line per node."""
        lines = []
        for nid in sorted(self.nodes):
            s = self.nodes[nid]
            pred = "" if s.peers.predecessor is None else str(s.peers.predecessor)
            fingers = ["" if f is None else str(f) for f in s.peers.fingers]
            lines.append(",".join([str(nid), str(int(s.alive)), str(s.peers.successor), pred] + fingers))
        return lines
