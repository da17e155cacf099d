"""Generic autonomic management framework.

A :class:`Gamf` instance holds the shared knowledge (time-stamped events and
metric values), a registry of system adapters and the trigger engine that
fires metric extractors and policy evaluators.  Time is simulated integer
milliseconds; nothing here reads a wall clock.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Union
from urllib.parse import quote

EVENT_GENERATOR = "event_generator"
METRIC_EXTRACTOR = "metric_extractor"
POLICY_EVALUATOR = "policy_evaluator"
EFFECTOR = "effector"
ADAPTER_KINDS = (EVENT_GENERATOR, METRIC_EXTRACTOR, POLICY_EVALUATOR, EFFECTOR)


class GamfError(Exception):
    pass


class RegistryError(GamfError):
    pass


class ProtectionError(RegistryError):
    pass


class RejectedRecord(GamfError):
    pass


class TimeRegression(GamfError):
    pass


@dataclass(frozen=True)
class Event:
    event_type: str
    timestamp: int
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.event_type:
            raise ValueError("event_type must be non-empty")
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")


@dataclass(frozen=True)
class MetricValue:
    metric_type: str
    timestamp: int
    value: float
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.metric_type:
            raise ValueError("metric_type must be non-empty")
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")
        if not math.isfinite(self.value):
            raise ValueError("metric value must be finite")

    @property
    def event_type(self):
        # lets queries treat events and metrics uniformly
        return self.metric_type


Record = Union[Event, MetricValue]


@dataclass(frozen=True)
class AdapterDescriptor:
    adapter_id: str
    kind: str
    facet: str = ""
    claimed_event_types: frozenset = frozenset()
    protected: bool = False

    def __post_init__(self):
        if self.kind not in ADAPTER_KINDS:
            raise ValueError(f"unknown adapter kind {self.kind!r}")
        object.__setattr__(self, "claimed_event_types", frozenset(self.claimed_event_types))


@dataclass(frozen=True)
class TriggerSpec:
    """When an adapter's callback runs.

    ``periodic`` fires every ``interval`` ms, ``on_event`` fires whenever an
    event of ``event_type`` is stored, and ``custom`` asks ``predicate(now,
    new_records)`` after every record and every :meth:`Gamf.advance`.
    """

    mode: str
    interval: Optional[int] = None
    event_type: Optional[str] = None
    predicate: Optional[Callable] = None
    start: int = 0

    def __post_init__(self):
        if self.mode == "periodic":
            if self.interval is None or self.interval <= 0:
                raise ValueError("periodic interval must be > 0")
        elif self.mode == "on_event":
            if not self.event_type:
                raise ValueError("on_event trigger needs an event_type")
        elif self.mode == "custom":
            if self.predicate is None:
                raise ValueError("custom trigger needs a predicate")
        else:
            raise ValueError(f"unknown trigger mode {self.mode!r}")

    @classmethod
    def periodic(cls, interval, start=0):
        return cls("periodic", interval=interval, start=start)

    @classmethod
    def on_event(cls, event_type):
        return cls("on_event", event_type=event_type)

    @classmethod
    def custom(cls, predicate):
        return cls("custom", predicate=predicate)


@dataclass(frozen=True)
class KnowledgeFilter:
    type_filter: Optional[frozenset] = None
    window: tuple = (0, math.inf)
    consume_since_last: bool = False
    kind: Optional[str] = None  # "event", "metric" or None for both

    def __post_init__(self):
        lo, hi = self.window
        if lo > hi:
            raise ValueError("filter window must satisfy from <= to")
        if self.type_filter is not None:
            object.__setattr__(self, "type_filter", frozenset(self.type_filter))


class _Adapter:
    __slots__ = ("descriptor", "trigger", "callback", "next_due", "pending")

    def __init__(self, descriptor, trigger, callback):
        self.descriptor = descriptor
        self.trigger = trigger
        self.callback = callback
        self.next_due = None
        self.pending = []
        if trigger is not None and trigger.mode == "periodic":
            self.next_due = trigger.start + trigger.interval


class Gamf:
    """Shared knowledge, adapter registry and trigger engine.

    Store operations hold a re-entrant lock so the knowledge base may be
    shared between threads; callbacks run while no lock is held.
    """

    def __init__(self):
        self._lock = threading.RLock()
        self._records = []
        self._by_type = {}
        self._adapters = {}
        self._order = []  # registration order, drives on_event dispatch
        self._claims = {}
        self._cursors = {}
        self._now = 0
        self.firing_log = []

    # -- registry -----------------------------------------------------

    def register_adapter(self, descriptor, trigger=None, callback=None):
        with self._lock:
            if descriptor.adapter_id in self._adapters:
                raise RegistryError(f"duplicate adapter id {descriptor.adapter_id!r}")
            if descriptor.kind == EVENT_GENERATOR:
                taken = [t for t in descriptor.claimed_event_types if t in self._claims]
                if taken:
                    raise RegistryError(f"event types already claimed: {sorted(taken)}")
                for t in descriptor.claimed_event_types:
                    self._claims[t] = descriptor.adapter_id
            adapter = _Adapter(descriptor, trigger, callback)
            if adapter.next_due is not None and adapter.next_due < self._now:
                adapter.next_due = self._now
            self._adapters[descriptor.adapter_id] = adapter
            self._order.append(descriptor.adapter_id)
            return descriptor.adapter_id

    def unregister(self, adapter_id):
        with self._lock:
            adapter = self._adapters.get(adapter_id)
            if adapter is None:
                raise RegistryError(f"no adapter {adapter_id!r}")
            if adapter.descriptor.protected:
                raise ProtectionError(f"adapter {adapter_id!r} is protected")
            del self._adapters[adapter_id]
            self._order.remove(adapter_id)
            for t in adapter.descriptor.claimed_event_types:
                if self._claims.get(t) == adapter_id:
                    del self._claims[t]
            for key in [k for k in self._cursors if k[0] == adapter_id]:
                del self._cursors[key]

    def adapters(self, facet=None, kind=None):
        with self._lock:
            return [
                self._adapters[a].descriptor
                for a in self._order
                if (facet is None or self._adapters[a].descriptor.facet == facet)
                and (kind is None or self._adapters[a].descriptor.kind == kind)
            ]

    def __contains__(self, adapter_id):
        return adapter_id in self._adapters

    # -- knowledge ----------------------------------------------------

    def record_event(self, event, source=None):
        """Store ``event`` and synchronously fire matching on_event triggers.

        Returns the ids of the adapters fired as a consequence.
        """
        with self._lock:
            owner = self._claims.get(event.event_type)
            if owner is not None and owner != source:
                raise RejectedRecord(
                    f"{event.event_type!r} is claimed by {owner!r}, not {source!r}"
                )
            self._append(event)
        return self._dispatch(event)

    def record_metric(self, metric, source=None):
        with self._lock:
            owner = self._claims.get(metric.metric_type)
            if owner is not None and owner != source:
                raise RejectedRecord(
                    f"{metric.metric_type!r} is claimed by {owner!r}, not {source!r}"
                )
            self._append(metric)
        return self._dispatch(metric)

    def _append(self, rec):
        seq = len(self._records)
        self._records.append(rec)
        self._by_type.setdefault(rec.event_type, []).append(seq)

    def __len__(self):
        return len(self._records)

    def query(self, f=None, adapter_id=None):
        """Records matching ``f``, sorted by timestamp then insertion order.

        With ``consume_since_last`` only records not yet returned to
        ``adapter_id`` (per event type) are considered, and the cursor moves
        past everything that was examined.
        """
        f = f or KnowledgeFilter()
        if f.consume_since_last and adapter_id is None:
            raise ValueError("cursor queries need an adapter_id")
        lo, hi = f.window
        with self._lock:
            if f.type_filter is None:
                types = list(self._by_type)
            else:
                types = [t for t in f.type_filter if t in self._by_type]
            picked = []
            for t in types:
                seqs = self._by_type[t]
                start = 0
                if f.consume_since_last:
                    start = self._cursors.get((adapter_id, t), 0)
                    self._cursors[(adapter_id, t)] = len(seqs)
                for s in seqs[start:]:
                    rec = self._records[s]
                    if lo <= rec.timestamp < hi and _kind_ok(rec, f.kind):
                        picked.append(s)
            picked.sort(key=lambda s: (self._records[s].timestamp, s))
            return [self._records[s] for s in picked]

    # -- triggers -----------------------------------------------------

    @property
    def now(self):
        return self._now

    def next_due(self):
        """Earliest due time among periodic triggers, or None."""
        with self._lock:
            dues = [a.next_due for a in self._adapters.values() if a.next_due is not None]
        return min(dues) if dues else None

    def advance(self, now):
        """Fire every periodic trigger due at or before ``now``.

        Catch-up firings happen one by one in (due time, adapter id) order.
        """
        if now < self._now:
            raise TimeRegression(f"advance({now}) after {self._now}")
        fired = []
        while True:
            with self._lock:
                due = [
                    (a.next_due, aid)
                    for aid, a in self._adapters.items()
                    if a.next_due is not None and a.next_due <= now
                ]
                if not due:
                    break
                t, aid = min(due)
                adapter = self._adapters[aid]
                adapter.next_due = t + adapter.trigger.interval
                self._now = max(self._now, t)
            self._fire(adapter, t)
            fired.append(aid)
        self._now = now
        fired.extend(self._check_custom(now, None))
        return fired

    def _dispatch(self, rec):
        fired = []
        with self._lock:
            targets = []
            for aid in self._order:
                a = self._adapters[aid]
                if a.trigger is None:
                    continue
                if a.trigger.mode == "on_event" and a.trigger.event_type == rec.event_type:
                    targets.append(a)
                elif a.trigger.mode == "custom":
                    a.pending.append(rec)
        t = max(self._now, rec.timestamp)
        for a in targets:
            self._fire(a, t)
            fired.append(a.descriptor.adapter_id)
        fired.extend(self._check_custom(t, rec))
        return fired

    def _check_custom(self, now, rec):
        fired = []
        with self._lock:
            customs = [
                self._adapters[aid]
                for aid in self._order
                if self._adapters[aid].trigger is not None
                and self._adapters[aid].trigger.mode == "custom"
            ]
        for a in customs:
            new, a.pending = a.pending, []
            if a.trigger.predicate(now, new):
                self._fire(a, now)
                fired.append(a.descriptor.adapter_id)
        return fired

    def _fire(self, adapter, t):
        self.firing_log.append((t, adapter.descriptor.adapter_id))
        if adapter.callback is not None:
            adapter.callback(self, t)

    # -- export -------------------------------------------------------

    def dump_lines(self):
        """Knowledge as ``timestamp,kind,type,value,info...`` lines."""
        lines = []
        for rec in self.query():
            if isinstance(rec, MetricValue):
                kind, value, info = "metric", repr(float(rec.value)), rec.info
            else:
                kind, value, info = "event", "", rec.payload
            parts = [str(rec.timestamp), kind, quote(rec.event_type, safe=""), value]
            parts += [f"{quote(str(k), safe='')}={quote(str(v), safe='')}" for k, v in sorted(info.items())]
            lines.append(",".join(parts))
        return lines

    def dump(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in self.dump_lines():
                fh.write(line + "\n")


def _kind_ok(rec, kind):
    if kind is None:
        return True
    if kind == "event":
        return isinstance(rec, Event)
    return isinstance(rec, MetricValue)


def parse_dump_line(line):
    """Inverse of :meth:`Gamf.dump_lines` for a single line."""
    from urllib.parse import unquote

    parts = line.rstrip("\n").split(",")
    ts, kind, typ, value = int(parts[0]), parts[1], unquote(parts[2]), parts[3]
    info = {}
    for item in parts[4:]:
        k, _, v = item.partition("=")
        info[unquote(k)] = unquote(v)
    if kind == "metric":
        return MetricValue(typ, ts, float(value), info)
    return Event(typ, ts, info)
