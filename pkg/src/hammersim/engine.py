"""Deterministic discrete-event simulation kernel.

All timestamps are integer picoseconds.  Events with equal timestamps are
delivered in insertion order, so a run is a pure function of its inputs and
seed.  One Simulator instance is single-threaded; independent instances can
run in parallel processes for parameter sweeps.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

PS_PER_NS = 1000


class SchedulingError(ValueError):
    """Raised when an event is scheduled in the past (a programming error)."""


@dataclass
class Event:
    """A simulation event addressed to a registered component."""

    fire_at: int
    target: str
    payload: Any = None
    kind: str = ""
    sequence: Optional[int] = None


class Simulator:
    """Event queue plus clock.  `now` is in picoseconds."""

    __slots__ = ("now", "_heap", "_seq", "_handlers", "trace")

    def __init__(self, trace: bool = False):
        self.now: int = 0
        self._heap: list = []
        self._seq: int = 0
        self._handlers: dict[str, Callable[[Event], None]] = {}
        self.trace: Optional[list] = [] if trace else None

    def register(self, target: str, handler: Callable[[Event], None]) -> None:
        self._handlers[target] = handler

    def post(self, at: int, fn: Callable, arg: Any = None,
             target: str = "", kind: str = "") -> int:
        """Low-level scheduling of a callback; returns the event id."""
        if at < self.now:
            raise SchedulingError(
                f"event at {at} ps scheduled in the past (now={self.now} ps)")
        self._seq += 1
        heapq.heappush(self._heap, (at, self._seq, fn, arg, target, kind))
        return self._seq

    def schedule(self, event: Event) -> int:
        """Queue an Event for its registered target; returns a unique id."""
        handler = self._handlers[event.target]
        event.sequence = self.post(event.fire_at, handler, event,
                                   target=event.target, kind=event.kind)
        return event.sequence

    def run_until(self, deadline: int) -> int:
        """Process every event with fire_at <= deadline; clock ends at deadline."""
        if deadline < self.now:
            raise SchedulingError(
                f"run_until({deadline}) is before now={self.now}")
        heap = self._heap
        trace = self.trace
        count = 0
        while heap and heap[0][0] <= deadline:
            at, _seq, fn, arg, target, kind = heapq.heappop(heap)
            self.now = at
            if trace is not None:
                trace.append((at, target, kind))
            fn(arg)
            count += 1
        self.now = deadline
        return count

    def pending(self) -> int:
        return len(self._heap)

    def dump_trace(self, path: str) -> None:
        """One `fire_at_ps,target,kind` line per processed event."""
        if self.trace is None:
            raise ValueError("simulator was built without trace recording")
        with open(path, "w") as fh:
            for at, target, kind in self.trace:
                fh.write(f"{at},{target},{kind}\n")
