"""Minimal deterministic discrete-event kernel."""

import heapq
import itertools


class Kernel:
    """Event queue ordered by (time, scheduling order).

    Cancelled entries stay in the heap and are skipped when popped.
    """

    def __init__(self):
        self.now = 0
        self._heap = []
        self._seq = itertools.count()
        self._cancelled = set()

    def schedule(self, at, fn, *args):
        if at < self.now:
            raise ValueError(f"cannot schedule in the past ({at} < {self.now})")
        seq = next(self._seq)
        heapq.heappush(self._heap, (at, seq, fn, args))
        return seq

    def cancel(self, token):
        self._cancelled.add(token)

    def peek(self):
        while self._heap and self._heap[0][1] in self._cancelled:
            self._cancelled.discard(heapq.heappop(self._heap)[1])
        return self._heap[0][0] if self._heap else None

    def run(self, until=None, stop=None):
        """Process events up to and including time ``until``.

        ``stop`` is an optional zero-argument predicate checked after each
        event; the loop exits early once it returns True.
        """
        while True:
            t = self.peek()
            if t is None or (until is not None and t > until):
                break
            at, seq, fn, args = heapq.heappop(self._heap)
            self.now = at
            fn(*args)
            if stop is not None and stop():
                break
        if until is not None and (stop is None or not stop()):
            self.now = max(self.now, until)
